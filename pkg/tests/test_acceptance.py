"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run alone with ``pytest tests/test_acceptance.py -v``; the lines are written
past pytest's capture so they show up in the normal report.
"""

import time

import numpy as np
import pytest

from jumplq.control import (
    closed_loop_simulate, completion_residual, estimate_cost, moment_ode_cost, moment_trajectory,
    perturbation_test, random_open_loop,
)
from jumplq.errors import NotUniformlyConvex
from jumplq.finance import analytic_kernel, build_wealth_spec
from jumplq.riccati import discrete_dp_oracle, integrate_sre, pointwise_drift
from jumplq.sdep import sample_noise, simulate_paths

from conftest import finance_params, flow_errors, random_system, scalar_system, tanh_system


@pytest.fixture
def emit(capsys):
    def _emit(number, ok, detail):
        with capsys.disabled():
            print(f"\n[{'PASS' if ok else 'FAIL'}] criterion {number}: {detail}")
        assert ok, detail
    return _emit


def test_c01_finance_closed_form(emit):
    p = finance_params(r=0.05, n_steps=1000)
    spec = build_wealth_spec(p)
    start = time.perf_counter()
    sol = integrate_sre(spec)
    elapsed = time.perf_counter() - start
    exact = np.array([analytic_kernel(p, t) for t in sol.times])
    np.testing.assert_allclose(exact, -0.5 * np.exp(2 * 0.05 * (1 - sol.times)), rtol=1e-13)
    rel = float(np.max(np.abs(sol.P[:, 0, 0] - exact) / np.abs(exact)))
    emit(1, rel <= 1e-8 and elapsed < 1.0, f"max rel err {rel:.2e} (<=1e-8), runtime {elapsed:.3f}s (<1s)")


def test_c02_zero_optimal_portfolio(emit):
    sol = integrate_sre(build_wealth_spec(finance_params(r=0.05, n_steps=1000)))
    kmax = float(np.max(np.abs(sol.K)))
    emit(2, kmax <= 1e-10, f"max |K| = {kmax:.2e} (<=1e-10)")


def test_c03_threshold_sharpness(emit):
    sol = integrate_sre(build_wealth_spec(finance_params(alpha=0.055, n_steps=1000)))
    analytic = (0.055 - 0.05) / 2
    near = abs(sol.min_eig_N - analytic) <= 0.05 * analytic
    try:
        integrate_sre(build_wealth_spec(finance_params(alpha=0.045, n_steps=1000)))
        raised, where = False, "no error"
    except NotUniformlyConvex as exc:
        raised, where = True, f"raised at t={exc.t:g}"
    ok = sol.min_eig_N >= 0.0024 and near and raised
    emit(3, ok, f"alpha=0.055 min_eig_N={sol.min_eig_N:.6g} (>=0.0024, analytic {analytic}); "
                f"alpha=0.045 NotUniformlyConvex {where}")


def test_c04_indefiniteness_witness(emit):
    spec = build_wealth_spec(finance_params(alpha=0.04, n_steps=400))
    cs = (1.0, 2.0, 4.0)
    costs = np.array([moment_ode_cost(spec, 0, c, [0.0]) for c in cs])
    target = np.array([-0.005 * c**2 for c in cs])
    err = float(np.max(np.abs(costs - target)))
    ok = err <= 1e-10 and np.all(np.diff(costs) < 0)
    emit(4, ok, f"costs {costs.tolist()} vs -0.005c^2, max abs err {err:.2e} (<=1e-10), decreasing in c")


def test_c05_isometry(emit):
    spec = build_wealth_spec(finance_params(alpha=0.1, n_steps=100))
    start = time.perf_counter()
    nz = sample_noise(spec.measure, spec.grid, 100_000, seed=2024)
    xT = simulate_paths(spec, 0, 1.0, [0.0], nz).terminal[:, 0]
    elapsed = time.perf_counter() - start
    sq = xT**2
    mean, se = sq.mean(), sq.std(ddof=1) / np.sqrt(len(sq))
    exact = moment_trajectory(spec, 0, 1.0, [0.0]).second[0, -1, 0, 0]
    ok = abs(mean - 0.05) <= 3 * se and abs(exact - 0.05) <= 1e-6 and elapsed < 30
    emit(5, ok, f"MC E|X(T)|^2 = {mean:.5f} +/- {se:.5f} (3se band around 0.05); "
                f"moment ODE {exact:.12f}; runtime {elapsed:.1f}s (<30s)")


def test_c06_value_identity_and_completion(emit):
    n_paths, fine = 10_000, 800
    noise_fine = sample_noise(scalar_system(fine).measure, scalar_system(fine).grid, n_paths, seed=606)
    lines, ok = [], True
    for n_steps in (400, 800):
        spec = scalar_system(n_steps)
        nz = noise_fine.coarsen(fine // n_steps)
        allowance = 0.02 * 400 / n_steps
        sol = integrate_sre(spec)
        value = sol.value([1.0])
        est = estimate_cost(closed_loop_simulate(spec, sol, [1.0], nz), spec.scenarios[0].weights)
        gap = abs(est.mean - value)
        band = 3 * est.std_error + allowance
        ok &= gap <= band
        worst = 0.0
        for u in random_open_loop(spec, 5, seed=66):
            res = completion_residual(spec, sol, u, [1.0], nz)
            rb = 3 * res.std_error + allowance
            ok &= abs(res.residual) <= rb
            worst = max(worst, abs(res.residual) / rb)
        lines.append(f"N={n_steps}: |MC-P(0)|={gap:.4f} <= {band:.4f}, worst residual/band {worst:.2f}")
    emit(6, bool(ok), "; ".join(lines))


def _oracle_gaps(spec):
    P0 = integrate_sre(spec).P[0, 0, 0]
    return [abs(discrete_dp_oracle(spec, refine=f)[0, 0] - P0) for f in (1, 2, 4, 8)]


def test_c07_oracle_equivalence(emit):
    details, ok = [], True
    for name, spec in (("test system", scalar_system(1000)), ("tanh LQR", tanh_system(400))):
        gaps = _oracle_gaps(spec)
        ratios = [a / b for a, b in zip(gaps, gaps[1:])]
        ok &= min(ratios) >= 1.5 and gaps[-1] <= 1e-4
        details.append(f"{name}: gaps {[f'{g:.2e}' for g in gaps]}, ratios {[f'{r:.2f}' for r in ratios]}")
    emit(7, bool(ok), "; ".join(details))


def test_c08_flow_identities(emit):
    fine = 800
    base = scalar_system(fine)
    noise = sample_noise(base.measure, base.grid, 1000, seed=808)
    errs = np.array([flow_errors(scalar_system(n), noise.coarsen(fine // n), u=0.5) for n in (100, 200, 400, 800)])
    ratios = errs[:-1] / errs[1:]
    ok = bool(np.all(ratios >= 1.3))
    names = ("|Phi Psi - I|", "|flow state - X|", "|inverse flow - xi|")
    detail = "; ".join(f"{nm} ratios {np.round(ratios[:, i], 2).tolist()}" for i, nm in enumerate(names))
    emit(8, ok, detail)


def test_c09_pointwise_drift(emit):
    rng = np.random.default_rng(909)
    worst_gap, worst_neg, worst_zero = 0.0, np.inf, 0.0
    for spec in (scalar_system(400), random_system(rng, n=3, m=2, n_steps=100)):
        sol = integrate_sre(spec)
        scen = spec.scenarios[0]
        for _ in range(100):
            t = rng.uniform(0, 1)
            x, v = rng.normal(size=spec.n), rng.normal(size=spec.m)
            k = sol.grid.node_index(t)
            z = v + sol.K[k] @ x
            got = pointwise_drift(sol, scen, t, x, v)
            worst_gap = max(worst_gap, abs(got - z @ sol.N[k] @ z))
            worst_neg = min(worst_neg, got)
            worst_zero = max(worst_zero, abs(pointwise_drift(sol, scen, t, x, -sol.K[k] @ x)))
    ok = worst_gap <= 1e-10 and worst_neg >= 0 and worst_zero <= 1e-10
    emit(9, ok, f"max |drift - <N z,z>| {worst_gap:.1e}, min drift {worst_neg:.2e}, max drift at v=-Kx {worst_zero:.1e}")


def test_c10_perturbation_optimality(emit):
    spec = scalar_system(200)
    sol = integrate_sre(spec)
    nz = sample_noise(spec.measure, spec.grid, 10_000, seed=1010)
    dirs = random_open_loop(spec, 10, seed=1011)
    gaps = perturbation_test(spec, sol, [1.0], dirs, [0.1, 0.2], nz)
    by = {(g.epsilon, g.direction): g for g in gaps}
    nonneg = all(g.delta_J >= -3 * g.std_error for g in gaps)
    ratios, ok_ratio = [], True
    for i in range(len(dirs)):
        g1, g2 = by[(0.1, i)], by[(0.2, i)]
        if g1.delta_J > 5 * g1.std_error:
            r = g2.delta_J / g1.delta_J
            ratios.append(r)
            ok_ratio &= 3.5 <= r <= 4.5
    ok = nonneg and ok_ratio and len(ratios) > 0
    emit(10, ok, f"min dJ/se {min(g.delta_J / g.std_error for g in gaps):.1f} (>=-3); "
                 f"{len(ratios)} significant ratios in [{min(ratios):.3f}, {max(ratios):.3f}]")


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-v"]))
