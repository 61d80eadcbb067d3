"""Event-augmented Euler marching shared by every simulated process.

Each grid step [t_k, t_{k+1}] is split at the exact jump times that fall inside
it. On each sub-segment the state takes one Euler step using the Brownian
increment between the segment endpoints; at a jump time the jump map is applied
to the left limit. The driver is agnostic to what the state is (a vector, a
stack of matrices, ...): the caller supplies the advance and jump maps.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from ..errors import NonFiniteState
from .noise import NoiseBundle


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Values on the event-augmented skeleton.

    ``nodes``: (P, N+1, ...) values at grid nodes; ``ev_minus``/``ev_plus``:
    (J, ...) left limit and post-jump value at each jump event of the noise.
    """

    nodes: np.ndarray
    ev_minus: np.ndarray
    ev_plus: np.ndarray

    @property
    def terminal(self) -> np.ndarray:
        return self.nodes[:, -1]

    def map(self, fn) -> "Trajectory":
        return Trajectory(fn(self.nodes), fn(self.ev_minus), fn(self.ev_plus))


@dataclass(frozen=True, eq=False)
class ControlRecord:
    """Control applied on each segment: ``nodes`` (P, N, m) on the first segment
    of each step, ``ev_minus`` (J, m) on the segment ending at each jump (the
    value the jump sees), ``ev_plus`` (J, m) on the segment starting after it."""

    nodes: np.ndarray
    ev_minus: np.ndarray
    ev_plus: np.ndarray


def _step_layout(noise: NoiseBundle):
    steps = noise.jump_step
    order = np.argsort(steps, kind="stable")
    bounds = np.searchsorted(steps[order], np.arange(noise.grid.n_steps + 1))
    paths = noise.jump_path[order]
    rank = np.zeros(len(order), dtype=int)
    same = np.zeros(len(order), dtype=bool)
    same[1:] = (paths[1:] == paths[:-1]) & (steps[order][1:] == steps[order][:-1])
    for i in np.flatnonzero(same):
        rank[i] = rank[i - 1] + 1
    return order, bounds, rank


def march(noise: NoiseBundle, x0: np.ndarray,
          advance: Callable, jump: Callable,
          control: Optional[Callable] = None, m: int = 0):
    """Run the event-augmented Euler scheme over all paths at once.

    ``advance(k, x, u, dt, dW, paths)`` returns the state after one sub-segment;
    ``jump(k, x_minus, u, marks, paths)`` returns the post-jump state;
    ``control(k, t, x, paths)`` returns the control for the segment starting at
    ``(t, x)`` (x is the current left limit for the segment interior).
    Returns ``(Trajectory, ControlRecord | None)``.
    """
    grid = noise.grid
    P, N, J = noise.n_paths, grid.n_steps, noise.n_jumps
    x = np.array(np.broadcast_to(x0, (P,) + np.shape(x0)[1:]), dtype=float)
    shape = x.shape[1:]
    nodes = np.empty((P, N + 1) + shape)
    ev_minus = np.zeros((J,) + shape)
    ev_plus = np.zeros((J,) + shape)
    nodes[:, 0] = x
    rec = None
    if control is not None:
        rec = ControlRecord(np.zeros((P, N, m)), np.zeros((J, m)), np.zeros((J, m)))

    t_nodes = grid.nodes
    w_nodes = noise.w_nodes()
    order, bounds, rank = _step_layout(noise)
    all_paths = np.arange(P)

    for k in range(N):
        ev_k, rank_k = order[bounds[k]:bounds[k + 1]], rank[bounds[k]:bounds[k + 1]]
        cur_t = np.full(P, t_nodes[k])
        cur_w = w_nodes[:, k].copy()
        active, prev_ev = all_paths, None
        r = 0
        while True:
            evr = ev_k[rank_k == r]
            ev_paths = noise.jump_path[evr]
            pos = np.searchsorted(active, ev_paths)
            tgt_t = np.full(len(active), t_nodes[k + 1])
            tgt_w = w_nodes[active, k + 1]
            tgt_t[pos] = noise.jump_time[evr]
            tgt_w[pos] = noise.jump_w[evr]
            xa = x[active]
            u = None
            if control is not None:
                u = np.asarray(control(k, cur_t[active], xa, active), dtype=float).reshape(len(active), m)
                if r == 0:
                    rec.nodes[:, k] = u
                else:
                    rec.ev_plus[prev_ev] = u
            x[active] = advance(k, xa, u, tgt_t - cur_t[active], tgt_w - cur_w[active], active)
            if not len(evr):
                break
            xm = x[ev_paths]
            ev_minus[evr] = xm
            um = None
            if u is not None:
                um = u[pos]
                rec.ev_minus[evr] = um
            xp = jump(k, xm, um, noise.jump_mark[evr], ev_paths)
            x[ev_paths] = xp
            ev_plus[evr] = xp
            cur_t[ev_paths] = noise.jump_time[evr]
            cur_w[ev_paths] = noise.jump_w[evr]
            active, prev_ev = ev_paths, evr
            r += 1
        if not np.all(np.isfinite(x)):
            bad = int(np.argwhere(~np.isfinite(x.reshape(P, -1)))[0, 0])
            raise NonFiniteState(bad, t_nodes[k + 1])
        nodes[:, k + 1] = x
    return Trajectory(nodes, ev_minus, ev_plus), rec


@dataclass(frozen=True, eq=False)
class Skeleton:
    """Long-format view of the event-augmented time skeleton.

    Points are all grid nodes of every path plus every jump event, sorted by
    (path, time). ``node``/``event`` index into the Trajectory arrays (-1 where
    not applicable). Segment i runs from point i to point i+1 when ``has_seg[i]``.
    """

    path: np.ndarray
    time: np.ndarray
    node: np.ndarray
    event: np.ndarray
    w: np.ndarray
    step: np.ndarray
    has_seg: np.ndarray
    dt: np.ndarray
    dW: np.ndarray

    @classmethod
    def of(cls, noise: NoiseBundle) -> "Skeleton":
        grid = noise.grid
        P, N, J = noise.n_paths, grid.n_steps, noise.n_jumps
        node_path = np.repeat(np.arange(P), N + 1)
        node_k = np.tile(np.arange(N + 1), P)
        path = np.concatenate([node_path, noise.jump_path])
        time = np.concatenate([np.tile(grid.nodes, P), noise.jump_time])
        node = np.concatenate([node_k, np.full(J, -1)])
        event = np.concatenate([np.full(P * (N + 1), -1), np.arange(J)])
        w = np.concatenate([noise.w_nodes().ravel(), noise.jump_w])
        step = np.concatenate([np.minimum(node_k, N - 1), noise.jump_step])
        order = np.lexsort((event, time, path))
        path, time, node, event, w, step = (a[order] for a in (path, time, node, event, w, step))
        has_seg = np.zeros(len(path), dtype=bool)
        has_seg[:-1] = path[1:] == path[:-1]
        dt = np.zeros(len(path))
        dW = np.zeros(len(path))
        dt[:-1] = np.diff(time)
        dW[:-1] = np.diff(w)
        dt[~has_seg] = 0.0
        dW[~has_seg] = 0.0
        return cls(path, time, node, event, w, step, has_seg, dt, dW)

    @property
    def is_event(self) -> np.ndarray:
        return self.event >= 0

    def left(self, traj: Trajectory) -> np.ndarray:
        """Left-limit value at every point."""
        return self._gather(traj.nodes, traj.ev_minus)

    def right(self, traj: Trajectory) -> np.ndarray:
        """Post-jump (right-continuous) value at every point."""
        return self._gather(traj.nodes, traj.ev_plus)

    def _gather(self, nodes, events):
        out = np.empty((len(self.path),) + nodes.shape[2:])
        isn = self.node >= 0
        out[isn] = nodes[self.path[isn], self.node[isn]]
        out[~isn] = events[self.event[~isn]]
        return out

    def segment_controls(self, rec: ControlRecord) -> np.ndarray:
        """Control held on the segment starting at each point (zero where none)."""
        N = rec.nodes.shape[1]
        out = np.zeros((len(self.path), rec.nodes.shape[2]))
        isn = (self.node >= 0) & (self.node < N)
        out[isn] = rec.nodes[self.path[isn], self.node[isn]]
        ise = self.event >= 0
        out[ise] = rec.ev_plus[self.event[ise]]
        return out

    def scatter(self, left: np.ndarray, right: np.ndarray, P: int, N: int, J: int) -> Trajectory:
        """Inverse of left/right: pack per-point values back into a Trajectory."""
        nodes = np.empty((P, N + 1) + left.shape[1:])
        isn = self.node >= 0
        nodes[self.path[isn], self.node[isn]] = left[isn]
        ev_minus = np.empty((J,) + left.shape[1:])
        ev_plus = np.empty((J,) + left.shape[1:])
        ise = ~isn
        ev_minus[self.event[ise]] = left[ise]
        ev_plus[self.event[ise]] = right[ise]
        return Trajectory(nodes, ev_minus, ev_plus)

    def path_sums(self, values: np.ndarray, P: int) -> np.ndarray:
        """Sum per-point values over each path."""
        if values.ndim == 1:
            return np.bincount(self.path, weights=values, minlength=P)
        out = np.zeros((P,) + values.shape[1:])
        np.add.at(out, self.path, values)
        return out

    def cumulative(self, values: np.ndarray) -> np.ndarray:
        """Exclusive running sum within each path (value before adding point i)."""
        c = np.cumsum(values, axis=0)
        excl = c - values
        starts = np.ones(len(self.path), dtype=bool)
        starts[1:] = self.path[1:] != self.path[:-1]
        base = np.maximum.accumulate(np.where(starts, np.arange(len(self.path)), 0))
        return excl - excl[base]
