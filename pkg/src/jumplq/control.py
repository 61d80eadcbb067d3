"""Cost evaluation and optimality verification.

Monte Carlo costs use trapezoidal quadrature of the running cost over the
event-augmented skeleton. For deterministic open-loop controls the exact cost
follows from the first and second moments of the state, which obey closed
linear ODEs; those are integrated with RK4 and serve as the reference for the
Monte Carlo estimates. All comparative estimates use common random numbers.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import NonFiniteKernel
from .model import CostWeights, ProblemSpec
from .riccati import EPS_N, RiccatiSolution, mixed_value, solve_all
from .sdep import FeedbackControl, NoiseBundle, PathBundle, simulate_paths

MC_SIGMAS = 3.0


@dataclass(frozen=True)
class CostEstimate:
    mean: float
    std_error: float
    n_paths: int
    exact: Optional[float] = None

    def as_dict(self) -> dict:
        return {"mean": self.mean, "std_error": self.std_error, "n_paths": self.n_paths,
                "exact": self.exact}


@dataclass(frozen=True)
class ResidualEstimate:
    """Completion-of-squares residual J(u) - value - penalty, with its parts."""

    residual: float
    std_error: float
    cost: float
    value_kernel: float
    penalty: float

    def __float__(self):
        return self.residual


@dataclass(frozen=True)
class PerturbationGap:
    epsilon: float
    direction: int
    delta_J: float
    std_error: float


@dataclass
class VerificationReport:
    value_kernel: float
    mc_optimal_cost: CostEstimate
    completion: ResidualEstimate
    probe_delta: float
    perturbation_gaps: list
    min_eig_N: float
    pass_flags: dict = field(default_factory=dict)
    margins: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(self.pass_flags.values())

    def as_dict(self) -> dict:
        return {
            "value_kernel": self.value_kernel,
            "mc_cost_mean": self.mc_optimal_cost.mean,
            "mc_cost_stderr": self.mc_optimal_cost.std_error,
            "completion_residual": self.completion.residual,
            "completion_stderr": self.completion.std_error,
            "probe_delta": self.probe_delta,
            "perturbation_gaps": [
                {"epsilon": g.epsilon, "direction": g.direction, "delta_J": g.delta_J,
                 "std_error": g.std_error} for g in self.perturbation_gaps
            ],
            "min_eig_N": self.min_eig_N,
            "pass_flags": dict(self.pass_flags),
            "margins": dict(self.margins),
        }


def _scenario_mode(spec: ProblemSpec):
    return 0 if len(spec.scenarios) == 1 else None


def _as_solutions(sols) -> list:
    return [sols] if isinstance(sols, RiccatiSolution) else list(sols)


def _mean_se(values: np.ndarray) -> tuple[float, float]:
    n = len(values)
    se = float(values.std(ddof=1) / np.sqrt(n)) if n > 1 else 0.0
    return float(values.mean()), se


def _weights_list(weights, paths: PathBundle) -> list:
    if isinstance(weights, CostWeights):
        return [weights] * (int(paths.scenario.max()) + 1)
    return list(weights)


def _quad(M, a, b):
    """Row-wise a^T M b with M either shared or stacked per row."""
    if M.ndim == 2:
        return np.einsum("pi,ij,pj->p", a, M, b)
    return np.einsum("pi,pij,pj->p", a, M, b)


def path_costs(paths: PathBundle, weights) -> np.ndarray:
    """Realized cost L per path: trapezoidal running cost plus terminal term.

    ``weights`` is one CostWeights or a sequence indexed by each path's scenario.
    """
    wl = _weights_list(weights, paths)
    sk = paths.skeleton()
    xl, xr = sk.left(paths.states), sk.right(paths.states)
    u = sk.segment_controls(paths.controls)
    nxt = np.minimum(np.arange(len(sk.path)) + 1, len(sk.path) - 1)
    x_end = xl[nxt]
    scen = paths.scenario[sk.path]
    Q = np.stack([w.Q for w in wl])[scen, sk.step]
    S = np.stack([w.S for w in wl])[scen, sk.step]
    R = np.stack([w.R for w in wl])[scen, sk.step]

    def ell(x):
        return _quad(Q, x, x) + 2 * np.einsum("pi,pij,pj->p", u, S, x) + _quad(R, u, u)

    running = 0.5 * (ell(xr) + ell(x_end)) * sk.dt
    total = sk.path_sums(np.where(sk.has_seg, running, 0.0), paths.n_paths)
    xT = paths.terminal
    G = np.stack([w.G for w in wl])[paths.scenario]
    return total + np.einsum("pi,pij,pj->p", xT, G, xT)


def estimate_cost(paths: PathBundle, weights, exact: Optional[float] = None) -> CostEstimate:
    """Monte Carlo mean and standard error of the realized cost."""
    mean, se = _mean_se(path_costs(paths, weights))
    return CostEstimate(mean, se, paths.n_paths, exact)


@dataclass(frozen=True, eq=False)
class Moments:
    """Mean (B, N+1, n), second moment (B, N+1, n, n) and exact cost (B,)."""

    mean: np.ndarray
    second: np.ndarray
    cost: np.ndarray


def moment_trajectory(spec: ProblemSpec, scenario, open_loop_u, initial) -> Moments:
    """First/second moments and exact cost under deterministic open-loop controls.

    ``open_loop_u`` is a constant m-vector, an (N, m) table, or a batch
    (B, N, m) of tables evaluated together. Each step is one RK4 step with the
    control and coefficients frozen, which is exact to RK4 order.
    """
    _, scen = spec.scenario(scenario)
    grid, rates = spec.grid, spec.measure.rates
    Nst, n, m, h = grid.n_steps, spec.n, spec.m, grid.dt
    u = np.asarray(open_loop_u, dtype=float)
    if u.ndim <= 1:
        u = np.broadcast_to(np.broadcast_to(u, (m,)), (Nst, m))
    if u.ndim == 2:
        u = u[None]
    if u.shape[1:] != (Nst, m):
        raise ValueError(f"open-loop control shape {u.shape} incompatible with (N={Nst}, m={m})")
    Bn = u.shape[0]
    xi = np.asarray(initial, dtype=float).reshape(n)
    c, w = scen.coefficients, scen.weights

    mean = np.empty((Bn, Nst + 1, n))
    second = np.empty((Bn, Nst + 1, n, n))
    mean[:, 0] = xi
    second[:, 0] = np.outer(xi, xi)
    cost = np.zeros(Bn)

    for k in range(Nst):
        A, B, C, D, E, F = c.at(k)
        Q, S, R = w.at(k)
        uk = u[:, k]
        Bu, Du = uk @ B.T, uk @ D.T
        Fu = np.einsum("kij,bj->kbi", F, uk)
        run_u = np.einsum("bi,ij,bj->b", uk, R, uk)

        def f(mv, V):
            dm = mv @ A.T + Bu
            Cm = mv @ C.T
            dV = (A @ V + V @ A.T
                  + np.einsum("bi,bj->bij", Bu, mv) + np.einsum("bi,bj->bij", mv, Bu)
                  + C @ V @ C.T
                  + np.einsum("bi,bj->bij", Cm, Du) + np.einsum("bi,bj->bij", Du, Cm)
                  + np.einsum("bi,bj->bij", Du, Du))
            for lam, Ek, Fk in zip(rates, E, Fu):
                Em = mv @ Ek.T
                dV = dV + lam * (Ek @ V @ Ek.T + np.einsum("bi,bj->bij", Em, Fk)
                                 + np.einsum("bi,bj->bij", Fk, Em) + np.einsum("bi,bj->bij", Fk, Fk))
            dc = np.einsum("ij,bji->b", Q, V) + 2 * np.einsum("bi,ij,bj->b", uk, S, mv) + run_u
            return dm, dV, dc

        m0, V0 = mean[:, k], second[:, k]
        a1, b1, c1 = f(m0, V0)
        a2, b2, c2 = f(m0 + 0.5 * h * a1, V0 + 0.5 * h * b1)
        a3, b3, c3 = f(m0 + 0.5 * h * a2, V0 + 0.5 * h * b2)
        a4, b4, c4 = f(m0 + h * a3, V0 + h * b3)
        mean[:, k + 1] = m0 + h / 6 * (a1 + 2 * a2 + 2 * a3 + a4)
        V1 = V0 + h / 6 * (b1 + 2 * b2 + 2 * b3 + b4)
        second[:, k + 1] = 0.5 * (V1 + np.swapaxes(V1, -1, -2))
        cost = cost + h / 6 * (c1 + 2 * c2 + 2 * c3 + c4)
        if not np.all(np.isfinite(V1)):
            raise NonFiniteKernel(f"moment ODE blew up at t={grid.node(k + 1):.6g}")
    cost = cost + np.einsum("ij,bji->b", w.G, second[:, -1])
    return Moments(mean, second, cost)


def moment_ode_cost(spec: ProblemSpec, scenario, open_loop_u, initial):
    """Exact cost of a deterministic open-loop control from the moment ODEs.

    ``scenario=None`` mixes scenarios by probability. Returns a float, or an
    array for a batch of controls.
    """
    if scenario is None:
        total = sum(s.probability * moment_trajectory(spec, i, open_loop_u, initial).cost
                    for i, s in enumerate(spec.scenarios))
    else:
        total = moment_trajectory(spec, scenario, open_loop_u, initial).cost
    return float(total[0]) if np.ndim(open_loop_u) < 3 else total


def _gain_stack(sols) -> np.ndarray:
    return np.stack([s.K for s in _as_solutions(sols)])


def closed_loop_simulate(spec: ProblemSpec, sols, initial, noise: NoiseBundle,
                         offset=None) -> PathBundle:
    """Simulate under u = -K(t) X(t-) (+ optional open-loop ``offset``), per-path scenario gains."""
    return simulate_paths(spec, _scenario_mode(spec), FeedbackControl(_gain_stack(sols), offset),
                          initial, noise)


def _weights_of(spec: ProblemSpec):
    return [s.weights for s in spec.scenarios]


def completion_residual(spec: ProblemSpec, sols, control, initial, noise: NoiseBundle) -> ResidualEstimate:
    """Monte Carlo check of J(u) = value + E int <N (u + K X-), u + K X-> ds on common noise.

    The penalty integral uses left-endpoint (predictable) evaluation on each
    skeleton segment.
    """
    sols = _as_solutions(sols)
    paths = simulate_paths(spec, _scenario_mode(spec), control, initial, noise)
    L = path_costs(paths, _weights_of(spec))
    sk = paths.skeleton()
    xr = sk.right(paths.states)
    u = sk.segment_controls(paths.controls)
    scen = paths.scenario[sk.path]
    Ns = np.stack([s.N for s in sols])[scen, sk.step]
    Ks = np.stack([s.K for s in sols])[scen, sk.step]
    z = u + np.einsum("pij,pj->pi", Ks, xr)
    pen = np.einsum("pi,pij,pj->p", z, Ns, z) * sk.dt
    penalty = sk.path_sums(np.where(sk.has_seg, pen, 0.0), paths.n_paths)
    x0 = paths.states.nodes[:, 0]
    P0 = np.stack([s.P[0] for s in sols])[paths.scenario]
    value = np.einsum("pi,pij,pj->p", x0, P0, x0)
    res, se = _mean_se(L - value - penalty)
    return ResidualEstimate(res, se, float(L.mean()), float(value.mean()), float(penalty.mean()))


def random_open_loop(spec: ProblemSpec, n_controls: int, seed: int, n_pieces: Optional[int] = None,
                     normalize: bool = True) -> np.ndarray:
    """Piecewise-constant controls with i.i.d. normal levels, shape (n_controls, N, m).

    With ``normalize`` each control has unit L2 norm: sum_k |u_k|^2 dt = 1.
    """
    N, m = spec.grid.n_steps, spec.m
    pieces = min(N, n_pieces or 10)
    rng = np.random.default_rng(seed)
    levels = rng.standard_normal((n_controls, pieces, m))
    which = (np.arange(N) * pieces) // N
    u = levels[:, which]
    if normalize:
        norm = np.sqrt(np.sum(u**2, axis=(1, 2)) * spec.grid.dt)
        u = u / norm[:, None, None]
    return u


def probe_ratios(spec: ProblemSpec, n_controls: int, seed: int, n_pieces: Optional[int] = None) -> np.ndarray:
    """J(t0, 0; u) / ||u||^2 for random unit-norm open-loop controls (exact moment evaluation)."""
    if n_controls < 1:
        raise ValueError("n_controls must be >= 1")
    u = random_open_loop(spec, n_controls, seed, n_pieces)
    return np.atleast_1d(moment_ode_cost(spec, None, u, np.zeros(spec.n)))


def convexity_probe(spec: ProblemSpec, n_controls: int, seed: int, n_pieces: Optional[int] = None) -> float:
    """Smallest sampled ratio J(t0,0;u)/||u||^2.

    This is an upper bound on the uniform-convexity constant, not a
    certificate: only a negative value is conclusive (it exhibits a control
    with negative cost from the zero state).
    """
    return float(probe_ratios(spec, n_controls, seed, n_pieces).min())


def perturbation_test(spec: ProblemSpec, sols, initial, directions: Sequence, epsilons: Sequence[float],
                      noise: NoiseBundle) -> list[PerturbationGap]:
    """J(u* + eps v) - J(u*) on common noise for every (eps, v).

    ``u*`` is the Riccati feedback; each direction ``v`` is an (N, m) open-loop
    table added to it.
    """
    sols = _as_solutions(sols)
    weights = _weights_of(spec)
    base = path_costs(closed_loop_simulate(spec, sols, initial, noise), weights)
    out = []
    for eps in epsilons:
        for i, v in enumerate(directions):
            v = np.asarray(v, dtype=float)
            if not np.any(v) or eps == 0:
                out.append(PerturbationGap(float(eps), i, 0.0, 0.0))
                continue
            pert = path_costs(closed_loop_simulate(spec, sols, initial, noise, offset=eps * v), weights)
            d, se = _mean_se(pert - base)
            out.append(PerturbationGap(float(eps), i, d, se))
    return out


def verify(spec: ProblemSpec, initial, noise: NoiseBundle, *, eps_N: float = EPS_N,
           allowance: float = 0.02, n_directions: int = 3, epsilons=(0.1, 0.2),
           n_probe: int = 32, seed: int = 0, sols=None) -> VerificationReport:
    """Run the full optimality check and assemble a report with pass flags and margins."""
    sols = solve_all(spec, eps_N) if sols is None else _as_solutions(sols)
    xi = np.asarray(initial, dtype=float)
    value = mixed_value(spec, sols, xi)
    opt = estimate_cost(closed_loop_simulate(spec, sols, xi, noise), _weights_of(spec))
    test_u = random_open_loop(spec, 1, seed + 1)[0]
    comp = completion_residual(spec, sols, test_u, xi, noise)
    probe = convexity_probe(spec, n_probe, seed + 2)
    dirs = random_open_loop(spec, n_directions, seed + 3)
    gaps = perturbation_test(spec, sols, xi, dirs, epsilons, noise)

    margins = {
        "value_identity": MC_SIGMAS * opt.std_error + allowance - abs(opt.mean - value),
        "completion_residual": MC_SIGMAS * comp.std_error + allowance - abs(comp.residual),
        "perturbation_nonnegative": min((g.delta_J + MC_SIGMAS * g.std_error for g in gaps), default=0.0),
        "uniform_convexity": min(s.min_eig_N for s in sols) - eps_N,
        "probe_not_refuted": probe,
    }
    flags = {k: bool(v >= 0) if k != "probe_not_refuted" else bool(v > 0) for k, v in margins.items()}
    return VerificationReport(value, opt, comp, probe, gaps, min(s.min_eig_N for s in sols), flags, margins)

