"""Mean-variance style wealth problem with jumps.

Wealth follows dX = r X dt + sigma pi dW + sum_k gamma_k pi dN~_k and the
cost is -(lam/2) X(T)^2 + (alpha/2) int pi^2 dt. The terminal weight is
negative, so the problem is indefinite; it is well posed exactly when alpha
exceeds lam * max_t e^{2 int_t^T r} (sigma^2 + sum_k rate_k gamma_k^2).

Time-tabulated inputs (r, sigma, each gamma_k) are scalars or per-step arrays
of length n_steps, piecewise constant on the grid.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .control import moment_ode_cost
from .errors import ModelError, NotUniformlyConvex, OutOfRange
from .model import JumpMeasure, ProblemSpec, TimeGrid, single_scenario
from .riccati import EPS_N, integrate_sre

WITNESS_SCALES = (1.0, 2.0, 4.0)
ZERO_GAIN_NOTE = (
    "Deterministic coefficients give a zero optimal portfolio. Nonzero hedging "
    "gains need adapted random coefficients with nonzero martingale terms in the "
    "Riccati equation, which this solver does not handle."
)


@dataclass(frozen=True)
class FinanceParams:
    lam: float
    alpha: float
    r: object = 0.0
    sigma: object = 0.0
    gammas: tuple = ()
    rates: tuple = ()
    T: float = 1.0
    x0: float = 1.0
    n_steps: int = 1000
    t0: float = 0.0

    def __post_init__(self):
        if not self.lam > 0:
            raise ModelError("lam must be > 0")
        if not self.alpha > 0:
            raise ModelError("alpha must be > 0")
        if not self.T > self.t0:
            raise ModelError("T must exceed t0")
        if len(self.gammas) != len(self.rates):
            raise ModelError(f"{len(self.gammas)} jump sizes for {len(self.rates)} marks")
        for g in self.gammas:
            if np.any(np.asarray(g, dtype=float) <= -1):
                raise ModelError("jump sizes must exceed -1")
        if np.any(np.asarray(self.r, dtype=float) < 0):
            raise ModelError("risk-free rate must be >= 0")

    @property
    def grid(self) -> TimeGrid:
        return TimeGrid(self.t0, self.T, self.n_steps)

    @property
    def measure(self) -> JumpMeasure:
        return JumpMeasure.from_rates(list(self.rates))

    def steps(self, value) -> np.ndarray:
        """Per-step table of a scalar or tabulated input."""
        v = np.asarray(value, dtype=float)
        if v.ndim == 0:
            return np.full(self.n_steps, float(v))
        if v.shape != (self.n_steps,):
            raise ModelError(f"tabulated input has shape {v.shape}, expected ({self.n_steps},)")
        return v


def build_wealth_spec(params: FinanceParams, grid: TimeGrid | None = None,
                      measure: JumpMeasure | None = None) -> ProblemSpec:
    """One-scenario problem: A=r, D=sigma, F_k=gamma_k, R=alpha/2, G=-lam/2, all else zero."""
    grid = params.grid if grid is None else grid
    measure = params.measure if measure is None else measure
    if measure.n_marks != len(params.gammas):
        raise ModelError(f"measure has {measure.n_marks} marks, params give {len(params.gammas)} jump sizes")
    if grid.n_steps != params.n_steps:
        params = _with_steps(params, grid.n_steps)
    col = lambda v: params.steps(v)[:, None, None]
    return single_scenario(
        grid, measure, 1, 1,
        A=col(params.r), D=col(params.sigma), F=[col(g) for g in params.gammas],
        Q=0.0, S=0.0, R=params.alpha / 2, G=-params.lam / 2,
    )


def _with_steps(params: FinanceParams, n_steps: int) -> FinanceParams:
    for v in (params.r, params.sigma, *params.gammas):
        if np.ndim(v) > 0:
            raise ModelError("tabulated inputs require the grid to match params.n_steps")
    d = dict(params.__dict__)
    d["n_steps"] = n_steps
    return FinanceParams(**d)


def _growth(params: FinanceParams) -> np.ndarray:
    """int_{t_k}^T r ds at every node (exact for piecewise-constant r)."""
    r = params.steps(params.r) * params.grid.dt
    tail = np.concatenate([np.cumsum(r[::-1])[::-1], [0.0]])
    return tail


def _jump_variance(params: FinanceParams) -> np.ndarray:
    """sigma^2 + sum_k rate_k gamma_k^2 per step."""
    v = params.steps(params.sigma) ** 2
    for lam_k, g in zip(params.rates, params.gammas):
        v = v + lam_k * params.steps(g) ** 2
    return v


def uc_threshold(params: FinanceParams) -> float:
    """lam * max over nodes of e^{2 int_t^T r} (sigma^2 + gamma_bar^2)."""
    var = _jump_variance(params)
    var_nodes = np.concatenate([var, var[-1:]])
    return float(params.lam * np.max(np.exp(2 * _growth(params)) * var_nodes))


def check_uc(params: FinanceParams) -> tuple[bool, float]:
    """(alpha > threshold, alpha - threshold)."""
    margin = params.alpha - uc_threshold(params)
    return margin > 0, margin


def analytic_kernel(params: FinanceParams, t) -> float:
    """P(t) = -(lam/2) e^{2 int_t^T r}."""
    t = float(t)
    if not params.t0 <= t <= params.T:
        raise OutOfRange(f"t={t} outside [{params.t0}, {params.T}]")
    grid = params.grid
    r = params.steps(params.r)
    k = min(int(np.floor((t - grid.t0) / grid.dt)), grid.n_steps - 1)
    integral = r[k] * (grid.node(k + 1) - t) + np.sum(r[k + 1:]) * grid.dt
    return -0.5 * params.lam * float(np.exp(2 * integral))


@dataclass
class FinanceReport:
    threshold: float
    margin: float
    uc: bool
    P0_analytic: float
    P0_numeric: float | None
    min_eig_N: float | None
    gain_max_abs: float | None
    riccati_error: str | None
    witness_scales: list = field(default_factory=list)
    witness_costs: list = field(default_factory=list)
    note: str = ZERO_GAIN_NOTE

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def witness_costs(params: FinanceParams, scales=WITNESS_SCALES) -> list[float]:
    """Exact cost from zero wealth under constant portfolios pi = c."""
    spec = build_wealth_spec(params)
    return [moment_ode_cost(spec, 0, float(c), [0.0]) for c in scales]


def finance_report(params: FinanceParams, eps_N: float = EPS_N) -> FinanceReport:
    thr = uc_threshold(params)
    spec = build_wealth_spec(params)
    P0 = min_eig = gain = err = None
    try:
        sol = integrate_sre(spec, 0, eps_N)
        P0, min_eig = float(sol.P[0, 0, 0]), sol.min_eig_N
        gain = float(np.max(np.abs(sol.K)))
    except NotUniformlyConvex as exc:
        err = str(exc)
    return FinanceReport(
        threshold=thr, margin=params.alpha - thr, uc=params.alpha > thr,
        P0_analytic=analytic_kernel(params, params.t0), P0_numeric=P0, min_eig_N=min_eig,
        gain_max_abs=gain, riccati_error=err,
        witness_scales=list(WITNESS_SCALES), witness_costs=witness_costs(params),
    )
