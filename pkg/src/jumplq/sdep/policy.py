"""Control policies understood by the path simulator.

A policy is called once per skeleton segment as ``policy(k, t, x, paths, scen)``
with the step index, segment start times, left-limit states (rows), path
indices and per-path scenario indices; it returns one control row per path.
"""

from __future__ import annotations

import numpy as np


class Policy:
    m: int

    def __call__(self, k, t, x, paths, scen):
        raise NotImplementedError

    @property
    def open_loop(self) -> bool:
        return False


class ConstantControl(Policy):
    def __init__(self, value):
        self.value = np.atleast_1d(np.asarray(value, dtype=float))
        self.m = len(self.value)

    def __call__(self, k, t, x, paths, scen):
        return np.broadcast_to(self.value, (len(paths), self.m))

    @property
    def open_loop(self):
        return True

    def table(self, n_steps: int) -> np.ndarray:
        return np.broadcast_to(self.value, (n_steps, self.m)).copy()


class OpenLoopControl(Policy):
    """Deterministic (N, m) table, or per-path (P, N, m) table, piecewise constant on steps."""

    def __init__(self, table):
        self.values = np.asarray(table, dtype=float)
        if self.values.ndim not in (2, 3):
            raise ValueError(f"open-loop table must be (N, m) or (P, N, m), got {self.values.shape}")
        self.m = self.values.shape[-1]

    def __call__(self, k, t, x, paths, scen):
        if self.values.ndim == 2:
            return np.broadcast_to(self.values[k], (len(paths), self.m))
        return self.values[paths, k]

    @property
    def open_loop(self):
        return True

    def table(self, n_steps: int) -> np.ndarray:
        if self.values.shape[-2] != n_steps:
            raise ValueError(f"table has {self.values.shape[-2]} steps, grid has {n_steps}")
        return self.values


class FeedbackControl(Policy):
    """u = -K(t) x(t-) + offset(t), with K looked up at the step's left node.

    ``gains`` is (N+1, m, n) for one scenario or (S, N+1, m, n) indexed by the
    path's scenario. ``offset`` is an optional (N, m) open-loop term.
    """

    def __init__(self, gains, offset=None):
        g = np.asarray(gains, dtype=float)
        self.gains = g[None] if g.ndim == 3 else g
        self.m = self.gains.shape[2]
        self.offset = None if offset is None else np.asarray(offset, dtype=float)

    def __call__(self, k, t, x, paths, scen):
        if self.gains.shape[0] == 1:
            u = -x @ self.gains[0, k].T
        else:
            u = -np.einsum("pij,pj->pi", self.gains[scen, k], x)
        if self.offset is not None:
            u = u + self.offset[k]
        return u


class CallableControl(Policy):
    """Wraps ``fn(t, x) -> u`` evaluated row-wise on the left limit."""

    def __init__(self, fn, m: int):
        self.fn, self.m = fn, int(m)

    def __call__(self, k, t, x, paths, scen):
        return np.array([np.atleast_1d(self.fn(ti, xi)) for ti, xi in zip(t, x)]).reshape(len(paths), self.m)


def as_policy(obj, n_steps: int, m: int) -> Policy:
    """Coerce a constant, a table, a callable or a Policy into a Policy."""
    if obj is None:
        return ConstantControl(np.zeros(m))
    if isinstance(obj, Policy):
        return obj
    if callable(obj):
        return CallableControl(obj, m)
    a = np.asarray(obj, dtype=float)
    if a.ndim <= 1:
        c = ConstantControl(np.broadcast_to(a, (m,)) if a.ndim == 0 else a)
        if c.m != m:
            raise ValueError(f"constant control has {c.m} components, expected {m}")
        return c
    if a.shape[-1] != m or a.shape[-2] != n_steps:
        raise ValueError(f"control table shape {a.shape} incompatible with (N={n_steps}, m={m})")
    return OpenLoopControl(a)
