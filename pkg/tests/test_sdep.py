import numpy as np
import pytest

from jumplq.model import JumpMeasure, TimeGrid, single_scenario
from jumplq.sdep import (
    ConstantControl, FeedbackControl, fundamental_pair, inverse_flow, sample_noise, simulate_paths,
    state_via_flow,
)

from conftest import flow_errors, random_system, scalar_system


def test_noise_statistics():
    grid = TimeGrid(0, 2.0, 50)
    meas = JumpMeasure.from_rates([1.5, 0.5])
    nz = sample_noise(meas, grid, 20000, seed=7)
    assert nz.dW.var() == pytest.approx(grid.dt, rel=0.02)
    counts = nz.jump_counts()
    assert counts.mean() == pytest.approx(2.0 * 2.0, rel=0.02)
    assert np.mean(nz.jump_mark == 0) == pytest.approx(0.75, abs=0.01)
    assert np.all((nz.jump_time > 0) & (nz.jump_time <= 2.0))
    for p in range(50):
        times = [t for t, _ in nz.jumps_of(p)]
        assert np.all(np.diff(times) > 0)


def test_noise_independent_of_workers():
    grid = TimeGrid(0, 1, 40)
    meas = JumpMeasure.from_rates([2.0])
    a = sample_noise(meas, grid, 257, seed=3, workers=1)
    b = sample_noise(meas, grid, 257, seed=3, workers=4)
    for name in ("dW", "jump_path", "jump_time", "jump_mark", "jump_w", "scenario_u"):
        np.testing.assert_array_equal(getattr(a, name), getattr(b, name))
    c = sample_noise(meas, grid, 257, seed=4)
    assert not np.array_equal(a.dW, c.dW)


def test_coarsen_keeps_the_path():
    grid = TimeGrid(0, 1, 40)
    nz = sample_noise(JumpMeasure.from_rates([1.0]), grid, 10, seed=1)
    co = nz.coarsen(4)
    np.testing.assert_allclose(co.w_nodes(), nz.w_nodes()[:, ::4], atol=1e-14)
    np.testing.assert_array_equal(co.jump_time, nz.jump_time)


def test_deterministic_dynamics_match_euler():
    grid = TimeGrid(0, 1, 100)
    spec = single_scenario(grid, JumpMeasure(), 1, 1, A=-0.5, B=1.0, Q=1, R=1)
    nz = sample_noise(spec.measure, grid, 3, seed=0)
    pb = simulate_paths(spec, 0, 0.3, [2.0], nz)
    x = 2.0
    for _ in range(100):
        x = x + (-0.5 * x + 0.3) * grid.dt
    np.testing.assert_allclose(pb.terminal[:, 0], x, rtol=1e-13)
    np.testing.assert_array_equal(pb.states.nodes[:, 0, 0], 2.0)


def test_jump_applies_left_limit_map():
    spec = scalar_system(20)
    nz = sample_noise(spec.measure, spec.grid, 200, seed=5)
    pb = simulate_paths(spec, 0, 0.5, [1.0], nz)
    xm, xp = pb.states.ev_minus[:, 0], pb.states.ev_plus[:, 0]
    np.testing.assert_allclose(xp, xm + 0.2 * xm + 0.1 * 0.5, rtol=1e-13)


def test_feedback_zero_state_stays_zero():
    spec = scalar_system(50)
    nz = sample_noise(spec.measure, spec.grid, 50, seed=2)
    pb = simulate_paths(spec, 0, FeedbackControl(np.ones((51, 1, 1))), [0.0], nz)
    assert np.all(pb.states.nodes == 0)


def test_csv_reproducible(tmp_path):
    spec = scalar_system(30)
    outs = []
    for i in range(2):
        nz = sample_noise(spec.measure, spec.grid, 1, seed=11)
        pb = simulate_paths(spec, 0, 0.5, [1.0], nz)
        f = tmp_path / f"p{i}.csv"
        pb.to_csv(f)
        outs.append(f.read_bytes())
    assert outs[0] == outs[1]
    assert outs[0].splitlines()[0] == b"path,time,x0,u0,event,mark"


def test_flow_identities_small_system(rng):
    spec = random_system(rng, n=2, m=1, n_steps=400, n_marks=1)
    nz = sample_noise(spec.measure, spec.grid, 200, seed=9)
    assert max(flow_errors(spec, nz)) < 0.05
    flow = fundamental_pair(spec, 0, nz)
    np.testing.assert_array_equal(flow.phi.nodes[:, 0], np.broadcast_to(np.eye(2), (200, 2, 2)))


def test_printed_inverse_drift_breaks_identity(rng):
    spec = random_system(rng, n=2, m=1, n_steps=200, n_marks=1)
    nz = sample_noise(spec.measure, spec.grid, 200, seed=9)
    good = fundamental_pair(spec, 0, nz).defect()
    bad = fundamental_pair(spec, 0, nz, printed_form=True).defect()
    assert np.abs(bad.terminal).mean() > 5 * np.abs(good.terminal).mean()


def test_inverse_flow_of_fixed_vector():
    spec = scalar_system(50)
    nz = sample_noise(spec.measure, spec.grid, 20, seed=1)
    flow = fundamental_pair(spec, 0, nz)
    y = inverse_flow(spec, 0, flow, 0.0, nz, np.array([2.0]))
    np.testing.assert_allclose(y.nodes[:, :, 0], 2.0 * flow.psi.nodes[:, :, 0, 0])


def test_mixture_assigns_scenarios():
    from jumplq.model import CoefficientSet, CostWeights, ProblemSpec, Scenario, validate_problem
    grid = TimeGrid(0, 1, 10)
    w = CostWeights.build(10, 1, 1, Q=1, R=1)
    scen = [Scenario(p, CoefficientSet.build(10, 1, 1, A=a), w) for p, a in ((0.25, 0.0), (0.75, 1.0))]
    spec = validate_problem(ProblemSpec(grid, JumpMeasure(), tuple(scen), 1, 1))
    nz = sample_noise(spec.measure, grid, 4000, seed=0)
    pb = simulate_paths(spec, None, ConstantControl([0.0]), [1.0], nz)
    assert pb.scenario.mean() == pytest.approx(0.75, abs=0.03)
    grow = pb.terminal[:, 0] > 1.5
    np.testing.assert_array_equal(grow, pb.scenario == 1)


def test_no_rates_no_jumps_and_superposition():
    grid = TimeGrid(0, 1, 10)
    assert sample_noise(JumpMeasure.from_rates([0.0]), grid, 100, seed=0).n_jumps == 0
    nz = sample_noise(JumpMeasure.from_rates([3.0]), grid, 10_000, seed=1)
    assert abs(nz.jump_counts().mean() - 3.0) < 3 * np.sqrt(3 / 10_000)
    nz = sample_noise(JumpMeasure.from_rates([1.0, 2.0]), grid, 10_000, seed=2)
    assert abs(nz.jump_counts().mean() - 3.0) < 3 * np.sqrt(3 / 10_000)


def test_zero_coefficients_freeze_state():
    grid = TimeGrid(0, 1, 20)
    spec = single_scenario(grid, JumpMeasure.from_rates([2.0]), 2, 1)
    nz = sample_noise(spec.measure, grid, 30, seed=0)
    pb = simulate_paths(spec, 0, 1.0, [1.5, -2.0], nz)
    assert np.all(pb.states.nodes == np.array([1.5, -2.0]))
    assert np.all(pb.states.ev_plus == np.array([1.5, -2.0]))


def test_exponential_growth():
    grid = TimeGrid(0, 1, 1000)
    spec = single_scenario(grid, JumpMeasure(), 1, 1, A=0.7)
    pb = simulate_paths(spec, 0, None, [1.0], sample_noise(spec.measure, grid, 2, seed=0))
    assert abs(pb.terminal[0, 0] - np.exp(0.7)) < 2 * grid.dt


def test_jump_only_martingale():
    # the folded compensator leaves an O(dt^2) bias per step, negligible at this resolution
    grid = TimeGrid(0, 1, 400)
    spec = single_scenario(grid, JumpMeasure.from_rates([2.0]), 1, 1, E=[0.5])
    nz = sample_noise(spec.measure, grid, 20_000, seed=4)
    xT = simulate_paths(spec, 0, None, [1.0], nz).terminal[:, 0]
    assert abs(xT.mean() - 1.0) < 3 * xT.std(ddof=1) / np.sqrt(len(xT))


def test_flow_closed_forms():
    grid = TimeGrid(0, 1, 1000)
    spec = single_scenario(grid, JumpMeasure(), 2, 1, A=0.4 * np.eye(2))
    flow = fundamental_pair(spec, 0, sample_noise(spec.measure, grid, 2, seed=0))
    t = grid.nodes
    np.testing.assert_allclose(flow.phi.nodes[0, :, 0, 0], np.exp(0.4 * t), atol=2e-3)
    np.testing.assert_allclose(flow.psi.nodes[0, :, 0, 0], np.exp(-0.4 * t), atol=2e-3)
    jumpy = single_scenario(TimeGrid(0, 1, 10), JumpMeasure.from_rates([3.0]), 1, 1, E=[0.5])
    nz = sample_noise(jumpy.measure, jumpy.grid, 50, seed=1)
    fl = fundamental_pair(jumpy, 0, nz)
    np.testing.assert_allclose(fl.phi.ev_plus / fl.phi.ev_minus, 1.5, rtol=1e-14)
    np.testing.assert_allclose(fl.psi.ev_plus / fl.psi.ev_minus, 1 / 1.5, rtol=1e-14)


def test_state_via_flow_pure_drift_control():
    grid = TimeGrid(0, 2, 10)
    spec = single_scenario(grid, JumpMeasure(), 1, 1, B=0.5)
    nz = sample_noise(spec.measure, grid, 3, seed=0)
    flow = fundamental_pair(spec, 0, nz)
    pb = state_via_flow(spec, 0, flow, 2.0, [1.0], nz)
    np.testing.assert_allclose(pb.states.nodes[0, :, 0], 1.0 + 0.5 * 2.0 * grid.nodes, rtol=1e-14)
    y = inverse_flow(spec, 0, flow, 0.0, nz, np.array([3.0]))
    assert y.nodes[0, 0, 0] == 3.0
