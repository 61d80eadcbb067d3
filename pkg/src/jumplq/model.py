"""Problem data: time grid, finite jump measure, tabulated coefficients, scenarios.

Every time-dependent quantity is tabulated once per grid step (left endpoint)
and held constant across the step. The jump measure is a finite list of
marks, so every integral against it is a weighted sum over marks.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import (
    AsymmetricWeight,
    BadGrid,
    BadProbabilities,
    DimensionMismatch,
    NonInvertibleJumpMap,
    OutOfRange,
    ShapeMismatch,
)

SYMMETRY_TOL = 1e-10
PROBABILITY_TOL = 1e-12
DEFAULT_DELTA_INV = 1e-6


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


class _ArrayEq:
    """Field-wise equality that compares ndarray fields by value."""

    def __eq__(self, other):
        if type(other) is not type(self) and not (
            isinstance(other, _ArrayEq) and dataclasses.is_dataclass(other)
        ):
            return NotImplemented
        for f in dataclasses.fields(self):
            a, b = getattr(self, f.name), getattr(other, f.name, None)
            if isinstance(a, np.ndarray) or isinstance(b, np.ndarray):
                if not np.array_equal(np.asarray(a), np.asarray(b)):
                    return False
            elif a != b:
                return False
        return True

    __hash__ = None


@dataclass(frozen=True)
class TimeGrid:
    t0: float
    T: float
    n_steps: int

    def __post_init__(self):
        if not (np.isfinite(self.t0) and np.isfinite(self.T)) or not self.t0 < self.T:
            raise BadGrid(f"need finite t0 < T, got t0={self.t0}, T={self.T}")
        if int(self.n_steps) != self.n_steps or self.n_steps < 1:
            raise BadGrid(f"n_steps must be a positive integer, got {self.n_steps}")
        object.__setattr__(self, "t0", float(self.t0))
        object.__setattr__(self, "T", float(self.T))
        object.__setattr__(self, "n_steps", int(self.n_steps))

    @property
    def dt(self) -> float:
        return (self.T - self.t0) / self.n_steps

    @property
    def nodes(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.n_steps + 1)

    def node(self, k: int) -> float:
        return self.T if k == self.n_steps else self.t0 + self.dt * k

    def step_index(self, t):
        """Index of the step containing ``t`` (the last step owns ``T``)."""
        k = np.floor((np.asarray(t, dtype=float) - self.t0) / self.dt).astype(int)
        return np.clip(k, 0, self.n_steps - 1)

    def node_index(self, t) -> int:
        """Node whose piecewise-constant cell [t_k, t_{k+1}) contains ``t``; ``T`` maps to the last node."""
        t = float(t)
        tol = 1e-12 * max(1.0, abs(self.T))
        if t < self.t0 - tol or t > self.T + tol:
            raise OutOfRange(f"t={t} outside [{self.t0}, {self.T}]")
        if t >= self.T - tol:
            return self.n_steps
        return int(self.step_index(t))

    def refine(self, factor: int) -> "TimeGrid":
        return TimeGrid(self.t0, self.T, self.n_steps * int(factor))


@dataclass(frozen=True)
class JumpMark:
    rate: float
    label: str = ""


@dataclass(frozen=True)
class JumpMeasure:
    marks: tuple = ()

    def __post_init__(self):
        marks = tuple(m if isinstance(m, JumpMark) else JumpMark(*m) for m in self.marks)
        for mk in marks:
            if not np.isfinite(mk.rate) or mk.rate < 0:
                raise DimensionMismatch(f"jump rate must be finite and >= 0, got {mk.rate}")
        object.__setattr__(self, "marks", marks)

    @classmethod
    def from_rates(cls, rates: Sequence[float], labels: Sequence[str] | None = None) -> "JumpMeasure":
        labels = labels or [f"mark{k}" for k in range(len(rates))]
        return cls(tuple(JumpMark(float(r), str(l)) for r, l in zip(rates, labels)))

    @property
    def rates(self) -> np.ndarray:
        return np.array([m.rate for m in self.marks], dtype=float)

    @property
    def n_marks(self) -> int:
        return len(self.marks)

    @property
    def total_rate(self) -> float:
        return float(self.rates.sum())


def nu_integral(measure: JumpMeasure, values, shape=None) -> np.ndarray:
    """Integrate per-mark values against the jump measure: sum_k rate_k * value_k.

    ``values`` holds one array per mark (all the same shape). With no marks the
    result is a zero array of ``shape``.
    """
    if measure.n_marks == 0:
        if shape is None:
            raise ShapeMismatch("empty measure needs an explicit result shape")
        return np.zeros(shape)
    vals = [np.asarray(v, dtype=float) for v in values]
    if len(vals) != measure.n_marks:
        raise ShapeMismatch(f"expected {measure.n_marks} per-mark values, got {len(vals)}")
    if any(v.shape != vals[0].shape for v in vals):
        raise ShapeMismatch(f"per-mark shapes differ: {[v.shape for v in vals]}")
    if shape is not None and vals[0].shape != tuple(np.atleast_1d(shape)):
        raise ShapeMismatch(f"per-mark shape {vals[0].shape} != declared {shape}")
    return np.tensordot(measure.rates, np.stack(vals), axes=1)


def tabulate(value, n_steps: int, shape: tuple, name: str = "matrix") -> np.ndarray:
    """Broadcast a constant or per-step value to an (n_steps, *shape) array."""
    a = np.asarray(value, dtype=float)
    if a.ndim == 0 and shape == (1, 1):
        a = a.reshape(1, 1)
    if a.shape == shape:
        return np.broadcast_to(a, (n_steps,) + shape).copy()
    if a.shape == (n_steps,) + shape:
        return a.copy()
    if shape == (1, 1) and a.shape == (n_steps,):
        return a.reshape(n_steps, 1, 1).copy()
    raise DimensionMismatch(f"{name} has shape {a.shape}; expected {shape} or {(n_steps,) + shape}")


@dataclass(frozen=True, eq=False)
class CoefficientSet(_ArrayEq):
    """Dynamics coefficients, each tabulated per step.

    A, C: (N, n, n); B, D: (N, n, m); E: (K, N, n, n); F: (K, N, n, m).
    """

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray
    E: np.ndarray
    F: np.ndarray

    def __post_init__(self):
        for f in dataclasses.fields(self):
            object.__setattr__(self, f.name, _frozen(getattr(self, f.name)))

    @classmethod
    def build(cls, n_steps, n, m, A=None, B=None, C=None, D=None, E=(), F=(), n_marks=None):
        """Assemble from constants or per-step tables; omitted entries are zero."""
        n_marks = len(E) if n_marks is None else n_marks
        z = lambda r, c: np.zeros((r, c))
        E = list(E) or [z(n, n)] * n_marks
        F = list(F) or [z(n, m)] * n_marks
        if len(E) != n_marks or len(F) != n_marks:
            raise DimensionMismatch(f"need {n_marks} E and F matrices, got {len(E)} and {len(F)}")
        Et = np.array([tabulate(e, n_steps, (n, n), "E") for e in E]).reshape(n_marks, n_steps, n, n)
        Ft = np.array([tabulate(f, n_steps, (n, m), "F") for f in F]).reshape(n_marks, n_steps, n, m)
        return cls(
            A=tabulate(z(n, n) if A is None else A, n_steps, (n, n), "A"),
            B=tabulate(z(n, m) if B is None else B, n_steps, (n, m), "B"),
            C=tabulate(z(n, n) if C is None else C, n_steps, (n, n), "C"),
            D=tabulate(z(n, m) if D is None else D, n_steps, (n, m), "D"),
            E=Et,
            F=Ft,
        )

    def at(self, k: int):
        """Coefficients frozen on step ``k``: (A, B, C, D, E_k stack, F_k stack)."""
        return self.A[k], self.B[k], self.C[k], self.D[k], self.E[:, k], self.F[:, k]

    def refine(self, factor: int) -> "CoefficientSet":
        rep = lambda a, ax: np.repeat(a, factor, axis=ax)
        return CoefficientSet(rep(self.A, 0), rep(self.B, 0), rep(self.C, 0), rep(self.D, 0),
                              rep(self.E, 1), rep(self.F, 1))


@dataclass(frozen=True, eq=False)
class CostWeights(_ArrayEq):
    """Q: (N, n, n), S: (N, m, n), R: (N, m, m), G: (n, n). No sign condition."""

    Q: np.ndarray
    S: np.ndarray
    R: np.ndarray
    G: np.ndarray

    def __post_init__(self):
        for f in dataclasses.fields(self):
            object.__setattr__(self, f.name, _frozen(getattr(self, f.name)))

    @classmethod
    def build(cls, n_steps, n, m, Q=None, S=None, R=None, G=None):
        G = np.zeros((n, n)) if G is None else np.asarray(G, dtype=float)
        if G.ndim == 0 and n == 1:
            G = G.reshape(1, 1)
        if G.shape != (n, n):
            raise DimensionMismatch(f"G has shape {G.shape}; expected {(n, n)}")
        return cls(
            Q=tabulate(np.zeros((n, n)) if Q is None else Q, n_steps, (n, n), "Q"),
            S=tabulate(np.zeros((m, n)) if S is None else S, n_steps, (m, n), "S"),
            R=tabulate(np.zeros((m, m)) if R is None else R, n_steps, (m, m), "R"),
            G=G,
        )

    def at(self, k: int):
        return self.Q[k], self.S[k], self.R[k]

    def refine(self, factor: int) -> "CostWeights":
        return CostWeights(np.repeat(self.Q, factor, 0), np.repeat(self.S, factor, 0),
                           np.repeat(self.R, factor, 0), self.G)


@dataclass(frozen=True, eq=False)
class Scenario(_ArrayEq):
    probability: float
    coefficients: CoefficientSet
    weights: CostWeights


@dataclass(frozen=True, eq=False)
class ProblemSpec(_ArrayEq):
    grid: TimeGrid
    measure: JumpMeasure
    scenarios: tuple
    n: int
    m: int
    delta_inv: float = DEFAULT_DELTA_INV

    def __post_init__(self):
        object.__setattr__(self, "scenarios", tuple(self.scenarios))

    @property
    def probabilities(self) -> np.ndarray:
        return np.array([s.probability for s in self.scenarios])

    def scenario(self, which) -> tuple[int, Scenario]:
        """Resolve an index or a Scenario instance to (index, scenario)."""
        if isinstance(which, Scenario):
            for i, s in enumerate(self.scenarios):
                if s is which or s == which:
                    return i, s
            return -1, which
        i = int(which)
        if not 0 <= i < len(self.scenarios):
            raise OutOfRange(f"scenario index {i} out of range")
        return i, self.scenarios[i]

    def refine(self, factor: int) -> "ProblemSpec":
        """Same problem on a grid ``factor`` times finer (coefficients repeated)."""
        scen = tuple(Scenario(s.probability, s.coefficients.refine(factor), s.weights.refine(factor))
                     for s in self.scenarios)
        return dataclasses.replace(self, grid=self.grid.refine(factor), scenarios=scen)


@dataclass(frozen=True, eq=False)
class ValidatedProblem(ProblemSpec):
    """A ProblemSpec whose invariants have been checked."""


def _check_shape(a: np.ndarray, shape: tuple, name: str):
    if a.shape != shape:
        raise DimensionMismatch(f"{name} has shape {a.shape}; expected {shape}")


def _symmetrized(a: np.ndarray, name: str) -> np.ndarray:
    asym = np.max(np.abs(a - np.swapaxes(a, -1, -2))) if a.size else 0.0
    if asym > SYMMETRY_TOL:
        raise AsymmetricWeight(f"{name} asymmetry {asym:.3g} exceeds {SYMMETRY_TOL:g}")
    return 0.5 * (a + np.swapaxes(a, -1, -2))


def validate_problem(spec: ProblemSpec) -> ValidatedProblem:
    """Check every invariant of ``spec`` and return it wrapped as validated.

    Tiny asymmetry in Q, R, G is removed by symmetrization; larger asymmetry is
    rejected. Probabilities are renormalized to sum exactly to one.
    """
    grid, N, n, m, K = spec.grid, spec.grid.n_steps, int(spec.n), int(spec.m), spec.measure.n_marks
    if not isinstance(grid, TimeGrid):
        raise BadGrid("grid must be a TimeGrid")
    if n < 1 or m < 1:
        raise DimensionMismatch(f"state/control dimensions must be positive, got n={n}, m={m}")
    if not spec.scenarios:
        raise BadProbabilities("at least one scenario is required")
    if not spec.delta_inv > 0:
        raise NonInvertibleJumpMap(f"delta_inv must be positive, got {spec.delta_inv}")
    probs = spec.probabilities
    if np.any(~np.isfinite(probs)) or np.any(probs <= 0) or np.any(probs > 1):
        raise BadProbabilities(f"scenario probabilities must lie in (0, 1], got {probs.tolist()}")
    if abs(probs.sum() - 1.0) > PROBABILITY_TOL:
        raise BadProbabilities(f"scenario probabilities sum to {probs.sum()!r}, not 1")
    probs = probs / probs.sum()

    eye = np.eye(n)
    scenarios = []
    for i, (p, s) in enumerate(zip(probs, spec.scenarios)):
        c, w = s.coefficients, s.weights
        tag = f"scenario {i}"
        _check_shape(c.A, (N, n, n), f"{tag} A")
        _check_shape(c.B, (N, n, m), f"{tag} B")
        _check_shape(c.C, (N, n, n), f"{tag} C")
        _check_shape(c.D, (N, n, m), f"{tag} D")
        _check_shape(c.E, (K, N, n, n), f"{tag} E")
        _check_shape(c.F, (K, N, n, m), f"{tag} F")
        _check_shape(w.Q, (N, n, n), f"{tag} Q")
        _check_shape(w.S, (N, m, n), f"{tag} S")
        _check_shape(w.R, (N, m, m), f"{tag} R")
        _check_shape(w.G, (n, n), f"{tag} G")
        for name in ("A", "B", "C", "D", "E", "F"):
            if not np.all(np.isfinite(getattr(c, name))):
                raise DimensionMismatch(f"{tag} {name} has non-finite entries")
        for name in ("Q", "S", "R", "G"):
            if not np.all(np.isfinite(getattr(w, name))):
                raise DimensionMismatch(f"{tag} {name} has non-finite entries")
        if K:
            dets = np.abs(np.linalg.det(eye + c.E))
            bad = np.argwhere(dets < spec.delta_inv)
            if bad.size:
                k, j = bad[0]
                raise NonInvertibleJumpMap(
                    f"{tag}: |det(I + E_{k})| = {dets[k, j]:.3g} < {spec.delta_inv:g} "
                    f"at t={grid.node(int(j)):.6g}"
                )
        weights = CostWeights(_symmetrized(w.Q, f"{tag} Q"), w.S,
                              _symmetrized(w.R, f"{tag} R"), _symmetrized(w.G, f"{tag} G"))
        scenarios.append(Scenario(float(p), c, weights))
    return ValidatedProblem(grid=grid, measure=spec.measure, scenarios=tuple(scenarios),
                            n=n, m=m, delta_inv=float(spec.delta_inv))


def single_scenario(grid: TimeGrid, measure: JumpMeasure, n: int, m: int, *,
                    delta_inv: float = DEFAULT_DELTA_INV, Q=None, S=None, R=None, G=None,
                    **coefficients) -> ValidatedProblem:
    """Convenience constructor for the deterministic-coefficient case."""
    coef = CoefficientSet.build(grid.n_steps, n, m, n_marks=measure.n_marks, **coefficients)
    weights = CostWeights.build(grid.n_steps, n, m, Q=Q, S=S, R=R, G=G)
    return validate_problem(ProblemSpec(grid, measure, (Scenario(1.0, coef, weights),), n, m, delta_inv))
