"""Brownian increments and exact Poisson jump events, one counter-based stream per path.

Each path draws from its own Philox stream keyed by the seed and addressed by
(stream kind, path index), so a bundle never depends on how paths are split
across workers. Jump times are exact (exponential inter-arrivals per mark), and
the Brownian value at each jump time is filled in by a Brownian bridge so the
whole bundle describes one continuous path per sample.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from ..model import JumpMeasure, TimeGrid

_BROWNIAN, _JUMPS, _SCENARIO = 1, 2, 3


def _stream(seed: int, kind: int, path: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=int(seed), counter=[0, 0, kind, path]))


@dataclass(frozen=True, eq=False)
class NoiseBundle:
    """Per-path noise on a shared grid.

    ``dW``: (P, N) Brownian increments. Jump events are flat arrays sorted by
    (path, time); ``jump_w`` is the absolute Brownian value W(tau) - W(t0).
    ``scenario_u`` holds one uniform per path used to draw its scenario.
    """

    seed: int
    n_paths: int
    grid: TimeGrid
    n_marks: int
    dW: np.ndarray
    jump_path: np.ndarray
    jump_time: np.ndarray
    jump_mark: np.ndarray
    jump_w: np.ndarray
    scenario_u: np.ndarray

    @property
    def n_jumps(self) -> int:
        return len(self.jump_time)

    @property
    def jump_step(self) -> np.ndarray:
        return self.grid.step_index(self.jump_time)

    def w_nodes(self) -> np.ndarray:
        """Brownian path at grid nodes, shape (P, N+1)."""
        w = np.zeros((self.n_paths, self.grid.n_steps + 1))
        np.cumsum(self.dW, axis=1, out=w[:, 1:])
        return w

    def jump_counts(self) -> np.ndarray:
        return np.bincount(self.jump_path, minlength=self.n_paths)

    def jumps_of(self, path: int) -> list[tuple[float, int]]:
        sel = self.jump_path == path
        return list(zip(self.jump_time[sel].tolist(), self.jump_mark[sel].tolist()))

    def coarsen(self, factor: int) -> "NoiseBundle":
        """The same sample paths seen on a grid ``factor`` times coarser."""
        factor = int(factor)
        N = self.grid.n_steps
        if factor < 1 or N % factor:
            raise ValueError(f"cannot coarsen {N} steps by {factor}")
        dW = self.dW.reshape(self.n_paths, N // factor, factor).sum(axis=2)
        grid = TimeGrid(self.grid.t0, self.grid.T, N // factor)
        return NoiseBundle(self.seed, self.n_paths, grid, self.n_marks, dW, self.jump_path,
                           self.jump_time, self.jump_mark, self.jump_w, self.scenario_u)

    def subset(self, paths) -> "NoiseBundle":
        """Noise restricted to ``paths`` (renumbered 0..len-1)."""
        paths = np.asarray(paths, dtype=int)
        remap = np.full(self.n_paths, -1)
        remap[paths] = np.arange(len(paths))
        keep = np.isin(self.jump_path, paths)
        new_path = remap[self.jump_path[keep]]
        order = np.lexsort((self.jump_time[keep], new_path))
        return NoiseBundle(self.seed, len(paths), self.grid, self.n_marks, self.dW[paths],
                           new_path[order], self.jump_time[keep][order],
                           self.jump_mark[keep][order], self.jump_w[keep][order],
                           self.scenario_u[paths])


def _path_draws(seed, grid: TimeGrid, rates: np.ndarray, path: int):
    N, dt, t0, T = grid.n_steps, grid.dt, grid.t0, grid.T
    dW = _stream(seed, _BROWNIAN, path).standard_normal(N) * np.sqrt(dt)
    g = _stream(seed, _JUMPS, path)
    times, marks = [], []
    horizon = T - t0
    for k, rate in enumerate(rates):
        if rate <= 0:
            continue
        t, chunk = t0, int(rate * horizon + 5 * np.sqrt(rate * horizon) + 8)
        while True:
            arr = t + np.cumsum(g.exponential(1.0 / rate, size=chunk))
            inside = arr[arr <= T]
            times.append(inside)
            marks.append(np.full(len(inside), k))
            if len(inside) < chunk:
                break
            t = arr[-1]
    if times:
        times, marks = np.concatenate(times), np.concatenate(marks)
        order = np.argsort(times, kind="stable")
        times, marks = times[order], marks[order]
    else:
        times, marks = np.zeros(0), np.zeros(0, dtype=int)
    bridge = g.standard_normal(len(times))
    u = _stream(seed, _SCENARIO, path).random()
    return dW, times, marks.astype(int), bridge, u


def _bridge_values(grid: TimeGrid, w_nodes, path, times, z):
    """Brownian value at each jump time, bridged between neighbouring skeleton points."""
    w = np.empty(len(times))
    if not len(times):
        return w
    step = grid.step_index(times)
    nodes = grid.nodes
    prev_t = nodes[step].copy()
    prev_w = w_nodes[path, step].copy()
    same = np.zeros(len(times), dtype=bool)
    same[1:] = (path[1:] == path[:-1]) & (step[1:] == step[:-1])
    rank = np.zeros(len(times), dtype=int)
    for i in np.flatnonzero(same):
        rank[i] = rank[i - 1] + 1
    end_t, end_w = nodes[step + 1], w_nodes[path, step + 1]
    for r in range(rank.max() + 1):
        sel = np.flatnonzero(rank == r)
        if r:
            prev_t[sel] = times[sel - 1]
            prev_w[sel] = w[sel - 1]
        span = end_t[sel] - prev_t[sel]
        a = times[sel] - prev_t[sel]
        frac = np.where(span > 0, a / np.where(span > 0, span, 1.0), 0.0)
        var = np.clip(a * (end_t[sel] - times[sel]) / np.where(span > 0, span, 1.0), 0.0, None)
        w[sel] = prev_w[sel] + frac * (end_w[sel] - prev_w[sel]) + np.sqrt(var) * z[sel]
    return w


def sample_noise(measure: JumpMeasure, grid: TimeGrid, n_paths: int, seed: int,
                 workers: int = 1) -> NoiseBundle:
    """Draw Brownian increments and Poisson jump events for ``n_paths`` paths.

    The result is identical for any ``workers`` count.
    """
    n_paths = int(n_paths)
    if n_paths < 1:
        raise ValueError(f"n_paths must be >= 1, got {n_paths}")
    if int(seed) < 0:
        raise ValueError(f"seed must be non-negative, got {seed}")
    rates = measure.rates

    def block(paths):
        return [_path_draws(seed, grid, rates, p) for p in paths]

    chunks = np.array_split(np.arange(n_paths), max(1, int(workers)))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=int(workers)) as pool:
            draws = [d for part in pool.map(block, chunks) for d in part]
    else:
        draws = block(range(n_paths))

    dW = np.array([d[0] for d in draws]).reshape(n_paths, grid.n_steps)
    jump_time = np.concatenate([d[1] for d in draws]) if draws else np.zeros(0)
    jump_mark = np.concatenate([d[2] for d in draws]).astype(int)
    z = np.concatenate([d[3] for d in draws])
    jump_path = np.repeat(np.arange(n_paths), [len(d[1]) for d in draws])
    scenario_u = np.array([d[4] for d in draws])

    w_nodes = np.zeros((n_paths, grid.n_steps + 1))
    np.cumsum(dW, axis=1, out=w_nodes[:, 1:])
    jump_w = _bridge_values(grid, w_nodes, jump_path, jump_time, z)
    return NoiseBundle(int(seed), n_paths, grid, measure.n_marks, dW, jump_path, jump_time,
                       jump_mark, jump_w, scenario_u)
