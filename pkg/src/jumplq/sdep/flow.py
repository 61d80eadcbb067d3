"""Fundamental matrix pair, variation-of-constants state, and inverse flow.

Phi solves the uncontrolled matrix equation. Psi is simulated from its own
equation, never by inverting Phi, so the defect Phi Psi - I measures the
scheme. Itô's formula for Psi = Phi^{-1} gives, between jumps,

    dPsi = Psi (-A + sum_k rate_k E_k + C C) dt - Psi C dW,

and Psi+ = Psi- (I + E_k)^{-1} at a jump of mark k.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..model import ProblemSpec
from .engine import Skeleton, Trajectory, march
from .noise import NoiseBundle
from .paths import PathBundle
from .policy import as_policy


@dataclass(frozen=True, eq=False)
class FlowPair:
    """Phi, Psi on the skeleton plus the tabulated correction terms.

    ``corr_drift``: (N, n, m) = C D + sum_k rate_k E_k (I+E_k)^{-1} F_k.
    ``corr_jump``: (K, N, n, m) = (I+E_k)^{-1} F_k.
    """

    phi: Trajectory
    psi: Trajectory
    corr_drift: np.ndarray
    corr_jump: np.ndarray
    noise: NoiseBundle
    scenario: int

    def defect(self) -> Trajectory:
        """Phi Psi - I on the skeleton."""
        n = self.phi.nodes.shape[-1]
        eye = np.eye(n)
        prod = lambda a, b: np.einsum("...ij,...jk->...ik", a, b) - eye
        return Trajectory(prod(self.phi.nodes, self.psi.nodes),
                          prod(self.phi.ev_minus, self.psi.ev_minus),
                          prod(self.phi.ev_plus, self.psi.ev_plus))


def correction_terms(spec: ProblemSpec, scenario):
    c = spec.scenario(scenario)[1].coefficients
    n = spec.n
    inv = np.linalg.inv(np.eye(n) + c.E)  # (K, N, n, n)
    gamma = inv @ c.F
    ei_f = c.E @ gamma
    rates = spec.measure.rates
    corr = c.C @ c.D + np.einsum("k,kNij->Nij", rates, ei_f)
    return corr, gamma


def fundamental_pair(spec: ProblemSpec, scenario, noise: NoiseBundle,
                     printed_form: bool = False) -> FlowPair:
    """Simulate Phi and Psi on common noise with the event-augmented Euler scheme.

    ``printed_form=True`` swaps in the between-jump inverse drift
    Psi (-A + C^T C), which drops the sum_k rate_k E_k term and transposes the
    Ito correction. It exists only to show that this form breaks Phi Psi = I
    when jumps are present or C is not symmetric.
    """
    idx, scen = spec.scenario(scenario)
    c = scen.coefficients
    n = spec.n
    rates = spec.measure.rates
    eye = np.eye(n)
    A, C = c.A, c.C
    sumE = np.einsum("k,kNij->Nij", rates, c.E)
    phi_drift = A - sumE
    if printed_form:
        psi_drift = -A + np.swapaxes(C, -1, -2) @ C
    else:
        psi_drift = -A + sumE + C @ C
    jump_inv = np.linalg.inv(eye + c.E)  # (K, N, n, n)

    def advance(k, x, u, dt, dW, paths):
        phi, psi = x[:, 0], x[:, 1]
        new_phi = phi + (phi_drift[k] @ phi) * dt[:, None, None] + (C[k] @ phi) * dW[:, None, None]
        new_psi = psi + (psi @ psi_drift[k]) * dt[:, None, None] - (psi @ C[k]) * dW[:, None, None]
        return np.stack([new_phi, new_psi], axis=1)

    def jump(k, x, u, marks, paths):
        phi, psi = x[:, 0], x[:, 1]
        return np.stack([phi + c.E[marks, k] @ phi, psi @ jump_inv[marks, k]], axis=1)

    x0 = np.broadcast_to(np.stack([eye, eye]), (noise.n_paths, 2, n, n))
    traj, _ = march(noise, x0, advance, jump)
    corr, gamma = correction_terms(spec, idx if idx >= 0 else scen)
    return FlowPair(traj.map(lambda a: a[:, :, 0] if a.ndim == 5 else a[:, 0]),
                    traj.map(lambda a: a[:, :, 1] if a.ndim == 5 else a[:, 1]),
                    corr, gamma, noise, idx)


def _open_loop_segments(spec, control, noise, sk: Skeleton):
    pol = as_policy(control, spec.grid.n_steps, spec.m)
    if not pol.open_loop:
        raise ValueError("flow representation needs an open-loop control")
    table = pol.table(spec.grid.n_steps)
    if table.ndim == 2:
        return table[sk.step]
    return table[sk.path, sk.step]


def _control_integral(spec, scenario, flow: FlowPair, control, noise, sk: Skeleton):
    """Running control integral of the flow representation at every skeleton point.

    Returns (before, after): the accumulated integral up to the left limit and
    including the jump at each point.
    """
    c = spec.scenario(scenario)[1].coefficients
    rates = spec.measure.rates
    u = _open_loop_segments(spec, control, noise, sk)
    psi_r = sk.right(flow.psi)
    psi_l = sk.left(flow.psi)
    st = sk.step
    # drift coefficient after moving the compensator of the Gamma-integral into dt
    lebesgue = c.B - flow.corr_drift - np.einsum("k,kNij->Nij", rates, flow.corr_jump)
    seg = (np.einsum("pij,pj->pi", lebesgue[st], u) * sk.dt[:, None]
           + np.einsum("pij,pj->pi", c.D[st], u) * sk.dW[:, None])
    seg = np.einsum("pij,pj->pi", psi_r, seg) * sk.has_seg[:, None]
    jmp = np.zeros_like(seg)
    ev = sk.is_event
    if ev.any():
        marks = noise.jump_mark[sk.event[ev]]
        g = flow.corr_jump[marks, st[ev]]
        jmp[ev] = np.einsum("pij,pj->pi", psi_l[ev], np.einsum("pij,pj->pi", g, u[ev]))
    # u at an event point is the control of the segment that starts there; the
    # jump must see the control of the segment ending there, which lies in the
    # same step and is therefore the same table entry.
    before = sk.cumulative(seg + jmp)
    after = before + jmp
    return before, after


def state_via_flow(spec: ProblemSpec, scenario, flow: FlowPair, control, initial,
                   noise: NoiseBundle) -> PathBundle:
    """State assembled from Phi, Psi and the three control integrals (open-loop control)."""
    sk = Skeleton.of(noise)
    before, after = _control_integral(spec, scenario, flow, control, noise, sk)
    xi = np.asarray(initial, dtype=float)
    xi = np.broadcast_to(xi, (noise.n_paths, spec.n))[sk.path]
    left = np.einsum("pij,pj->pi", sk.left(flow.phi), xi + before)
    right = np.einsum("pij,pj->pi", sk.right(flow.phi), xi + after)
    traj = sk.scatter(left, right, noise.n_paths, noise.grid.n_steps, noise.n_jumps)
    idx = spec.scenario(scenario)[0]
    return PathBundle(noise, traj, None, np.full(noise.n_paths, idx))


def inverse_flow(spec: ProblemSpec, scenario, flow: FlowPair, control, noise: NoiseBundle, x):
    """Inverse flow Y(s) on the skeleton: the initial state that reaches ``x`` at time s.

    ``x`` is a fixed n-vector, a Trajectory, or a PathBundle whose states are
    inverted point by point. Y(s) = Psi(s) x(s) - (control integral up to s).
    """
    sk = Skeleton.of(noise)
    before, after = _control_integral(spec, scenario, flow, control, noise, sk)
    if isinstance(x, PathBundle):
        x = x.states
    if isinstance(x, Trajectory):
        xl, xr = sk.left(x), sk.right(x)
    else:
        xl = xr = np.broadcast_to(np.asarray(x, dtype=float), (len(sk.path), spec.n))
    left = np.einsum("pij,pj->pi", sk.left(flow.psi), xl) - before
    right = np.einsum("pij,pj->pi", sk.right(flow.psi), xr) - after
    return sk.scatter(left, right, noise.n_paths, noise.grid.n_steps, noise.n_jumps)
