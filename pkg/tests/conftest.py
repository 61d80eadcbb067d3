import numpy as np
import pytest

from jumplq.finance import FinanceParams
from jumplq.model import JumpMeasure, TimeGrid, single_scenario
from jumplq.sdep import Skeleton, fundamental_pair, inverse_flow, simulate_paths, state_via_flow


def scalar_system(n_steps=400, T=1.0):
    """Nondegenerate scalar test system with one jump mark and positive weights."""
    grid = TimeGrid(0.0, T, n_steps)
    return single_scenario(grid, JumpMeasure.from_rates([1.0]), 1, 1,
                           A=0.1, B=1.0, C=0.3, D=0.2, E=[0.2], F=[0.1], Q=1.0, S=0.0, R=1.0, G=1.0)


def tanh_system(n_steps=400, T=1.0):
    """Deterministic scalar LQR with P(t) = tanh(T - t)."""
    grid = TimeGrid(0.0, T, n_steps)
    return single_scenario(grid, JumpMeasure(), 1, 1, A=0.0, B=1.0, Q=1.0, R=1.0, G=0.0)


def finance_params(alpha=0.1, r=0.0, n_steps=400, lam=1.0, sigma=0.2, gamma=0.1, rate=1.0, T=1.0, x0=1.0):
    return FinanceParams(lam=lam, alpha=alpha, r=r, sigma=sigma, gammas=(gamma,), rates=(rate,),
                         T=T, x0=x0, n_steps=n_steps)


def random_system(rng, n=2, m=2, n_steps=50, n_marks=2, scale=0.3):
    """Small random system with definite weights, used for structural checks."""
    grid = TimeGrid(0.0, 1.0, n_steps)
    meas = JumpMeasure.from_rates(rng.uniform(0.2, 1.5, n_marks))
    mat = lambda r, c: scale * rng.standard_normal((r, c))
    spd = lambda k: (lambda a: a @ a.T + k * np.eye(a.shape[0]))(rng.standard_normal((k, k)))
    return single_scenario(
        grid, meas, n, m,
        A=mat(n, n), B=mat(n, m), C=mat(n, n), D=mat(n, m),
        E=[mat(n, n) for _ in range(n_marks)], F=[mat(n, m) for _ in range(n_marks)],
        Q=spd(n), S=0.1 * mat(m, n), R=spd(m), G=spd(n),
    )


def flow_errors(spec, noise, u=0.5):
    """Path-averaged max over the skeleton of the three flow identity defects.

    Returns (|Phi Psi - I|, |flow state - simulated state|, |inverse flow of X - xi|).
    """
    xi = np.ones(spec.n)
    flow = fundamental_pair(spec, 0, noise)
    pb = simulate_paths(spec, 0, u, xi, noise)
    vf = state_via_flow(spec, 0, flow, u, xi, noise)
    y = inverse_flow(spec, 0, flow, u, noise, pb)
    sk = Skeleton.of(noise)
    starts = np.r_[0, np.flatnonzero(np.diff(sk.path)) + 1]

    def worst(left, right, target=0.0):
        pts = len(sk.path)
        dev = np.abs(np.concatenate([(left - target).reshape(pts, -1), (right - target).reshape(pts, -1)], 1)).max(1)
        return float(np.maximum.reduceat(dev, starts).mean())

    d = flow.defect()
    return (worst(sk.left(d), sk.right(d)),
            worst(sk.left(vf.states) - sk.left(pb.states), sk.right(vf.states) - sk.right(pb.states)),
            worst(sk.left(y), sk.right(y), xi))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
