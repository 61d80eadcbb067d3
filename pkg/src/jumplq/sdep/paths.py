"""Controlled linear jump-diffusion simulation and the path bundle it produces."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Optional

import numpy as np

from ..model import ProblemSpec
from .engine import ControlRecord, Skeleton, Trajectory, march
from .noise import NoiseBundle
from .policy import Policy, as_policy


@dataclass(frozen=True, eq=False)
class PathBundle:
    """Simulated states/controls on the event-augmented skeleton of ``noise``."""

    noise: NoiseBundle
    states: Trajectory
    controls: Optional[ControlRecord]
    scenario: np.ndarray

    @property
    def grid(self):
        return self.noise.grid

    @property
    def n_paths(self) -> int:
        return self.noise.n_paths

    @property
    def terminal(self) -> np.ndarray:
        return self.states.terminal

    def skeleton(self) -> Skeleton:
        return Skeleton.of(self.noise)

    def rows(self):
        """Yield (path, time, x, u, flag, mark) rows; flag 0 node, 1 pre-jump, 2 post-jump."""
        sk = self.skeleton()
        left, right = sk.left(self.states), sk.right(self.states)
        m = 0 if self.controls is None else self.controls.nodes.shape[2]
        N = self.grid.n_steps
        for i in range(len(sk.path)):
            p, t = int(sk.path[i]), float(sk.time[i])
            if sk.node[i] >= 0:
                k = sk.node[i]
                u = np.zeros(m) if self.controls is None else self.controls.nodes[p, min(k, N - 1)]
                yield p, t, left[i], u, 0, -1
            else:
                j = sk.event[i]
                mark = int(self.noise.jump_mark[j])
                if self.controls is None:
                    um = up = np.zeros(0)
                else:
                    um, up = self.controls.ev_minus[j], self.controls.ev_plus[j]
                yield p, t, left[i], um, 1, mark
                yield p, t, right[i], up, 2, mark

    def to_csv(self, path) -> None:
        """Write the path dump (17 significant digits)."""
        n = self.states.nodes.shape[2]
        m = 0 if self.controls is None else self.controls.nodes.shape[2]
        header = ["path", "time"] + [f"x{i}" for i in range(n)] + [f"u{i}" for i in range(m)] + ["event", "mark"]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for p, t, x, u, flag, mark in self.rows():
                w.writerow([p, f"{t:.17g}"] + [f"{v:.17g}" for v in x] + [f"{v:.17g}" for v in u] + [flag, mark])


def assign_scenarios(spec: ProblemSpec, noise: NoiseBundle, scenario=None) -> np.ndarray:
    """Per-path scenario index: fixed when ``scenario`` is given, else drawn from the noise uniforms."""
    if scenario is not None:
        return np.full(noise.n_paths, spec.scenario(scenario)[0])
    cum = np.cumsum(spec.probabilities)
    return np.minimum(np.searchsorted(cum, noise.scenario_u, side="right"), len(cum) - 1)


class LinearDynamics:
    """Coefficient lookup for the state equation, stacked over scenarios.

    Between jumps the compensator of the Poisson integral is folded into the
    drift: A - sum_k rate_k E_k and B - sum_k rate_k F_k.
    """

    def __init__(self, spec: ProblemSpec, scenarios):
        rates = spec.measure.rates
        cs = [s.coefficients for s in scenarios]
        self.A = np.stack([c.A for c in cs])
        self.B = np.stack([c.B for c in cs])
        self.C = np.stack([c.C for c in cs])
        self.D = np.stack([c.D for c in cs])
        self.E = np.stack([c.E for c in cs])  # (S, K, N, n, n)
        self.F = np.stack([c.F for c in cs])
        self.Ac = self.A - np.einsum("k,skNij->sNij", rates, self.E)
        self.Bc = self.B - np.einsum("k,skNij->sNij", rates, self.F)
        self.single = len(cs) == 1

    def _pick(self, arr, k, scen):
        return arr[0, k] if self.single else arr[scen, k]

    @staticmethod
    def mv(M, x):
        return x @ M.T if M.ndim == 2 else np.einsum("pij,pj->pi", M, x)

    def advance(self, k, x, u, dt, dW, scen):
        Ac, Bc, C, D = (self._pick(a, k, scen) for a in (self.Ac, self.Bc, self.C, self.D))
        drift = self.mv(Ac, x) + self.mv(Bc, u)
        diff = self.mv(C, x) + self.mv(D, u)
        return x + drift * dt[:, None] + diff * dW[:, None]

    def jump(self, k, x, u, marks, scen):
        if self.single:
            E, F = self.E[0, marks, k], self.F[0, marks, k]
        else:
            E, F = self.E[scen, marks, k], self.F[scen, marks, k]
        return x + np.einsum("pij,pj->pi", E, x) + np.einsum("pij,pj->pi", F, u)


def simulate_paths(spec: ProblemSpec, scenario, policy, initial, noise: NoiseBundle) -> PathBundle:
    """Euler scheme for the controlled state equation on the event-augmented skeleton.

    ``scenario`` is an index or Scenario, or None to draw each path's scenario
    from the noise. ``policy`` may be a Policy, a constant, an (N, m) or
    (P, N, m) open-loop table, or a callable ``f(t, x) -> u``.
    """
    if noise.grid != spec.grid:
        raise ValueError("noise grid does not match problem grid")
    pol: Policy = as_policy(policy, spec.grid.n_steps, spec.m)
    scen = assign_scenarios(spec, noise, scenario)
    if scenario is not None:
        dyn = LinearDynamics(spec, [spec.scenario(scenario)[1]])
        scen_local = np.zeros(noise.n_paths, dtype=int)
    else:
        dyn = LinearDynamics(spec, spec.scenarios)
        scen_local = scen
    x0 = np.asarray(initial, dtype=float)
    if x0.ndim == 1:
        x0 = np.broadcast_to(x0, (noise.n_paths, spec.n))
    if x0.shape != (noise.n_paths, spec.n):
        raise ValueError(f"initial state shape {x0.shape} incompatible with n={spec.n}")

    traj, rec = march(
        noise, x0,
        advance=lambda k, x, u, dt, dW, paths: dyn.advance(k, x, u, dt, dW, scen_local[paths]),
        jump=lambda k, x, u, marks, paths: dyn.jump(k, x, u, marks, scen_local[paths]),
        control=lambda k, t, x, paths: pol(k, t, x, paths, scen[paths]),
        m=spec.m,
    )
    return PathBundle(noise, traj, rec, scen)
