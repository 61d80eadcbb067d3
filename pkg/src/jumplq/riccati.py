"""Backward Riccati integration with jumps, feedback gains, and an independent DP oracle.

With scenario-measurable coefficients the martingale parts of the stochastic
Riccati equation vanish, so each scenario's kernel solves the matrix ODE

    dP/dt = -(H - M N^{-1} M^T),   P(T) = G,

with N, M, H assembled from P and the coefficients. Lambda and Xi are kept as
explicit zero arguments so the assembly mirrors the general formulas.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .errors import NonFiniteKernel, NotUniformlyConvex, SingularInnerMatrix
from .model import JumpMeasure, ProblemSpec, TimeGrid

EPS_N = 1e-8


def _sym(a):
    return 0.5 * (a + a.T)


def nmh(P, A, B, C, D, E, F, Q, S, R, rates, Lam=None, Xi=None):
    """N, M, H for kernel P with step-frozen coefficients (E, F stacked per mark)."""
    n = P.shape[0]
    Lam = np.zeros((n, n)) if Lam is None else Lam
    Xi = np.zeros((len(rates), n, n)) if Xi is None else Xi
    I = np.eye(n)
    N = R + D.T @ P @ D
    M = P @ B + Lam @ D + C.T @ P @ D + S.T
    H = A.T @ P + P @ A + Lam @ C + C.T @ Lam + C.T @ P @ C + Q
    for lam, Ek, Fk, Xk in zip(rates, E, F, Xi):
        N = N + lam * (Fk.T @ (P + Xk) @ Fk)
        M = M + lam * (Ek.T @ P @ Fk + (I + Ek).T @ Xk @ Fk)
        H = H + lam * (Xk @ Ek + Ek.T @ Xk + Ek.T @ P @ Ek + Ek.T @ Xk @ Ek)
    return _sym(N), M, _sym(H)


def assemble_nmh(P, t, scenario, measure: JumpMeasure, grid: TimeGrid):
    """N (m x m), M (n x m), H (n x n) at time ``t`` for kernel value ``P``."""
    k = min(grid.node_index(t), grid.n_steps - 1)
    A, B, C, D, E, F = scenario.coefficients.at(k)
    Q, S, R = scenario.weights.at(k)
    return nmh(np.asarray(P, dtype=float), A, B, C, D, E, F, Q, S, R, measure.rates)


@dataclass(frozen=True, eq=False)
class RiccatiSolution:
    grid: TimeGrid
    rates: np.ndarray
    P: np.ndarray
    N: np.ndarray
    M: np.ndarray
    K: np.ndarray
    Lambda: np.ndarray
    Xi: np.ndarray
    min_eig_N: float
    scenario: int

    @property
    def times(self) -> np.ndarray:
        return self.grid.nodes

    def node_min_eig(self) -> np.ndarray:
        return np.array([np.linalg.eigvalsh(n)[0] for n in self.N])

    def value(self, xi) -> float:
        xi = np.asarray(xi, dtype=float)
        return float(xi @ self.P[0] @ xi)

    def to_csv(self, path) -> None:
        n, m = self.P.shape[1], self.K.shape[1]
        header = (["t"] + [f"P{i}{j}" for i in range(n) for j in range(n)] + ["min_eig_N"]
                  + [f"K{i}{j}" for i in range(m) for j in range(n)])
        eigs = self.node_min_eig()
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for k, t in enumerate(self.times):
                w.writerow([f"{t:.17g}"] + [f"{v:.17g}" for v in self.P[k].ravel()]
                           + [f"{eigs[k]:.17g}"] + [f"{v:.17g}" for v in self.K[k].ravel()])


def _rhs(P, t, coeffs, weights, rates, eps_N):
    N, M, H = nmh(P, *coeffs, *weights, rates)
    eig = np.linalg.eigvalsh(N)[0]
    if not np.isfinite(eig) or eig < eps_N:
        raise NotUniformlyConvex(t, eig)
    return -(H - M @ cho_solve(cho_factor(N), M.T))


def integrate_sre(spec: ProblemSpec, scenario=0, eps_N: float = EPS_N) -> RiccatiSolution:
    """Classical RK4 backward from T on the grid; N is checked at every stage.

    Raises NotUniformlyConvex with the offending time when the smallest
    eigenvalue of N drops below ``eps_N``.
    """
    idx, scen = spec.scenario(scenario)
    grid, rates = spec.grid, spec.measure.rates
    Nst, n, m, dt = grid.n_steps, spec.n, spec.m, grid.dt
    P = np.empty((Nst + 1, n, n))
    P[Nst] = scen.weights.G
    for k in range(Nst - 1, -1, -1):
        co, we = scen.coefficients.at(k), scen.weights.at(k)
        t1 = grid.node(k + 1)
        Pk = P[k + 1]
        f = lambda X, t: _rhs(X, t, co, we, rates, eps_N)
        k1 = f(Pk, t1)
        k2 = f(Pk - 0.5 * dt * k1, t1 - 0.5 * dt)
        k3 = f(Pk - 0.5 * dt * k2, t1 - 0.5 * dt)
        k4 = f(Pk - dt * k3, t1 - dt)
        new = _sym(Pk - dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4))
        if not np.all(np.isfinite(new)):
            raise NonFiniteKernel(f"kernel blew up at t={grid.node(k):.6g}")
        P[k] = new

    Ns, Ms, Ks = np.empty((Nst + 1, m, m)), np.empty((Nst + 1, n, m)), np.empty((Nst + 1, m, n))
    eigs = np.empty(Nst + 1)
    for k in range(Nst + 1):
        j = min(k, Nst - 1)
        Nk, Mk, _ = nmh(P[k], *scen.coefficients.at(j), *scen.weights.at(j), rates)
        eigs[k] = np.linalg.eigvalsh(Nk)[0]
        if eigs[k] < eps_N:
            raise NotUniformlyConvex(grid.node(k), eigs[k])
        Ns[k], Ms[k] = Nk, Mk
        Ks[k] = cho_solve(cho_factor(Nk), Mk.T)
    zeros = np.zeros((Nst + 1, n, n))
    return RiccatiSolution(grid, rates, P, Ns, Ms, Ks, zeros,
                           np.zeros((len(rates), Nst + 1, n, n)), float(eigs.min()), idx)


def feedback_gain(sol: RiccatiSolution, t) -> np.ndarray:
    """Gain K(t) = N^{-1} M^T, piecewise constant between nodes."""
    return sol.K[sol.grid.node_index(t)]


def pointwise_drift(sol: RiccatiSolution, scenario, t, x, v) -> float:
    """Drift rate of <P X, X> + running cost at state ``x`` and control ``v``.

    Uses the kernel's own time derivative -(H - M N^{-1} M^T), so the value is
    <N (v + K x), v + K x> up to round-off and is never negative.
    """
    k = sol.grid.node_index(t)
    j = min(k, sol.grid.n_steps - 1)
    x = np.atleast_1d(np.asarray(x, dtype=float))
    v = np.atleast_1d(np.asarray(v, dtype=float))
    N, M, H = nmh(sol.P[k], *scenario.coefficients.at(j), *scenario.weights.at(j), sol.rates)
    dP = -(H - M @ cho_solve(cho_factor(N), M.T))
    return float(x @ (dP + H) @ x + 2 * v @ M.T @ x + v @ N @ v)


def discrete_dp_oracle(spec: ProblemSpec, scenario=0, refine: int = 1) -> np.ndarray:
    """Kernel at t0 from the exact DP recursion of the Euler-discretized system.

    One step of size h maps X to Ahat X + Bhat u with
    Ahat = I + A h + C dW + sum_k E_k dN~_k and Bhat = B h + D dW + sum_k F_k dN~_k,
    where dW and the compensated counts dN~_k are centred with variances h and
    rate_k h. The quadratic DP only needs these second moments, so each
    expectation below is exact.
    """
    refine = int(refine)
    if refine < 1:
        raise ValueError("refine must be >= 1")
    _, scen = spec.scenario(scenario)
    grid, rates = spec.grid, spec.measure.rates
    h = grid.dt / refine
    n = spec.n
    I = np.eye(n)
    P = np.array(scen.weights.G, dtype=float)
    for kk in range(grid.n_steps * refine - 1, -1, -1):
        k = kk // refine
        A, B, C, D, E, F = scen.coefficients.at(k)
        Q, S, R = scen.weights.at(k)
        Ah = I + A * h
        Bh = B * h
        AA = Ah.T @ P @ Ah + h * (C.T @ P @ C)
        BB = Bh.T @ P @ Bh + h * (D.T @ P @ D)
        BA = Bh.T @ P @ Ah + h * (D.T @ P @ C)
        for lam, Ek, Fk in zip(rates, E, F):
            AA = AA + lam * h * (Ek.T @ P @ Ek)
            BB = BB + lam * h * (Fk.T @ P @ Fk)
            BA = BA + lam * h * (Fk.T @ P @ Ek)
        inner = _sym(R * h + BB)
        cross = BA + S * h
        try:
            fac = cho_factor(inner)
        except np.linalg.LinAlgError:
            raise SingularInnerMatrix(
                f"discrete inner matrix not positive definite at t={grid.t0 + kk * h:.6g}"
            ) from None
        P = _sym(Q * h + AA - cross.T @ cho_solve(fac, cross))
        if not np.all(np.isfinite(P)):
            raise NonFiniteKernel(f"oracle kernel blew up at t={grid.t0 + kk * h:.6g}")
    return P


def solve_all(spec: ProblemSpec, eps_N: float = EPS_N) -> list[RiccatiSolution]:
    """One solution per scenario."""
    return [integrate_sre(spec, i, eps_N) for i in range(len(spec.scenarios))]


def mixed_value(spec: ProblemSpec, sols, xi) -> float:
    """Scenario-mixed value sum_i p_i <P_i(t0) xi, xi>."""
    return float(sum(s.probability * sol.value(xi) for s, sol in zip(spec.scenarios, sols)))


__all__ = [
    "EPS_N", "RiccatiSolution", "assemble_nmh", "discrete_dp_oracle", "feedback_gain",
    "integrate_sre", "mixed_value", "nmh", "pointwise_drift", "solve_all",
]
