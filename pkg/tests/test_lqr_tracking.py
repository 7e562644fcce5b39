import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.optimize import brentq

from clf_forge import benchmarks
from clf_forge.config import DemonstratorConfig
from clf_forge.demonstrator import DiscreteDemonstration, _replay, demonstrate
from clf_forge.eval import trapezoid_cost
from clf_forge.lqr_tracking import (NotStabilizable, TimeOutOfRange, TrackingCostMatrices, build_schedule,
                                    equilibrium_lqr, estimated_tracking_cost, tracking_control)

from conftest import double_integrator, integrator

UNIT = TrackingCostMatrices(np.eye(1), np.eye(1))


def scalar_schedule(x=(0.3, 0.8), u=(0.5, -0.2)):
    demo = DiscreteDemonstration(1.0, np.array(x)[:, None], np.array(u)[:, None])
    return build_schedule(integrator(), demo, UNIT), demo


def dp_oracle():
    """Two-stage DP for x+ = x + u with stage cost x^2 + u^2 and terminal x^2,
    minimized over a fine control grid at x = 1."""
    u = np.linspace(-2, 2, 400_001)
    total = 1.0 + u**2 + (1.0 + u) ** 2
    i = np.argmin(total)
    return total[i], -u[i]


def test_scalar_schedule_matches_hand_recursion():
    sched, _ = scalar_schedule()
    assert sched.S[1, 0, 0] == pytest.approx(1.0, abs=1e-12)
    assert sched.S[0, 0, 0] == pytest.approx(1.5, abs=1e-12)
    assert sched.K[0, 0, 0] == pytest.approx(0.5, abs=1e-12)


def test_scalar_schedule_matches_dynamic_programming():
    value, gain = dp_oracle()
    sched, _ = scalar_schedule()
    assert sched.S[0, 0, 0] == pytest.approx(value, abs=1e-8)
    assert sched.K[0, 0, 0] == pytest.approx(gain, abs=1e-5)


def test_single_sample_schedule_is_terminal_weight():
    demo = DiscreteDemonstration(1.0, np.array([[0.2]]), np.array([[0.0]]))
    sched = build_schedule(integrator(), demo, UNIT)
    assert sched.S.shape == (1, 1, 1) and sched.S[0, 0, 0] == 1.0
    terminal = TrackingCostMatrices(np.eye(1), np.eye(1), terminal=np.array([[3.0]]))
    assert build_schedule(integrator(), demo, terminal).S[0, 0, 0] == 3.0


def test_tracking_control_examples():
    sched, demo = scalar_schedule()
    u, x = demo.inputs[:, 0], demo.states[:, 0]
    assert tracking_control(sched, [x[0]], 0.0)[0] == u[0]
    assert tracking_control(sched, [x[1]], 1.0)[0] == u[1]
    assert tracking_control(sched, [x[0] + 0.1], 0.0)[0] == pytest.approx(u[0] - 0.05, abs=1e-12)
    # midpoint with zero deviation at both ends is the mean feedforward
    sched2, demo2 = scalar_schedule(x=(0.3, 0.3), u=(0.5, -0.2))
    assert tracking_control(sched2, [0.3], 0.5)[0] == pytest.approx(0.15, abs=1e-12)
    with pytest.raises(TimeOutOfRange):
        tracking_control(sched, [0.0], 1.5)
    with pytest.raises(TimeOutOfRange):
        tracking_control(sched, [0.0], -0.1)


def test_estimated_cost_examples():
    sched, demo = scalar_schedule()
    x1 = demo.states[0]
    assert estimated_tracking_cost(sched, x1) == 0.0
    assert estimated_tracking_cost(sched, x1 + 1.0) == pytest.approx(1.5, abs=1e-12)
    assert estimated_tracking_cost(sched, x1 + 0.7) == estimated_tracking_cost(sched, x1 - 0.7)


def test_scalar_equilibrium_gain_fixed_point():
    # s = 1 + s - s^2/(1+s)  <=>  s^2 - s - 1 = 0
    s = brentq(lambda s: 1 + s - s**2 / (1 + s) - s, 0.5, 5.0)
    lqr = equilibrium_lqr(integrator(), UNIT, 1.0)
    assert lqr.S[0, 0] == pytest.approx(s, abs=1e-8)
    assert lqr.S[0, 0] == pytest.approx((1 + np.sqrt(5)) / 2, abs=1e-8)
    assert lqr.K[0, 0] == pytest.approx(s / (1 + s), abs=1e-8)


def test_double_integrator_closed_loop_stable():
    lqr = equilibrium_lqr(double_integrator(), TrackingCostMatrices(np.eye(2), np.eye(1)), 0.05)
    assert np.max(np.abs(np.linalg.eigvals(lqr.closed_loop))) < 1


def test_uncontrollable_unstable_mode_rejected():
    import sympy as sp
    from clf_forge.dynamics import ControlSystem
    x, u = sp.symbols("x u", real=True)
    unstable = ControlSystem("unstable", [x], [u], [x])  # input does not enter
    with pytest.raises(NotStabilizable):
        equilibrium_lqr(unstable, UNIT, 0.1, max_iter=2000)


def test_acrobot_gain_matches_published():
    printed = -1000 * np.array([1.58, 0.70, 0.52, 0.26])
    sys = benchmarks.system("acrobot")
    K = equilibrium_lqr(sys, TrackingCostMatrices(np.eye(4), np.eye(1)), 1e-3).K[0]
    assert np.all(np.abs(K / printed - 1) <= 0.05)


def test_acrobot_gain_at_benchmark_step_is_within_ten_percent():
    printed = -1000 * np.array([1.58, 0.70, 0.52, 0.26])
    K = equilibrium_lqr(benchmarks.system("acrobot"), TrackingCostMatrices(np.eye(4), np.eye(1)), 0.01).K[0]
    assert np.all(np.abs(K / printed - 1) <= 0.10)


@pytest.fixture(scope="module")
def pendulum_demos(pendulum):
    cfg, sys, cost, region, weights = pendulum
    rng = np.random.default_rng(11)
    demos = []
    while len(demos) < 20:
        demos.append(demonstrate(sys, cost, region, region.sample(rng), DemonstratorConfig(),
                                 cfg.h, cfg.horizon_steps, weights))
    return demos


def test_riccati_matrices_positive_definite(pendulum, pendulum_demos):
    sys = pendulum[1]
    for w in (pendulum[4], TrackingCostMatrices(np.eye(2), np.eye(1))):
        for demo in pendulum_demos:
            sched = build_schedule(sys, demo, w)
            assert sched.K.shape[0] == len(demo)
            assert np.allclose(sched.S, np.transpose(sched.S, (0, 2, 1)))
            assert np.linalg.eigvalsh(sched.S).min() > 0


def _offset_runs(pendulum, demo, direction, offsets=(0.4, 0.2, 0.1, 0.05)):
    cfg, sys, cost, _, weights = pendulum
    sched = build_schedule(sys, demo, weights)
    devs, gaps = [], []
    for off in offsets:
        X, U = _replay(sys, sched, demo.states[0] + off * direction, len(demo))
        devs.append(np.max(np.linalg.norm(X - demo.states, axis=1)))
        gaps.append(abs(trapezoid_cost(cost, X, U, cfg.h) - demo.cost(cost)))
    return np.array(devs), np.array(gaps)


def test_tracking_solution_locally_lipschitz(pendulum, pendulum_demos):
    rng = np.random.default_rng(5)
    for demo in pendulum_demos[:10]:
        d = rng.normal(size=2)
        devs, _ = _offset_runs(pendulum, demo, d / np.linalg.norm(d))
        ratios = devs[:-1] / devs[1:]
        assert np.all((ratios >= 1.5) & (ratios <= 3.0)), ratios


def test_tracking_cost_gap_shrinks(pendulum, pendulum_demos):
    rng = np.random.default_rng(6)
    for demo in pendulum_demos[:10]:
        d = rng.normal(size=2)
        _, gaps = _offset_runs(pendulum, demo, d / np.linalg.norm(d))
        assert np.all(gaps[1:] <= 1.1 * gaps[:-1]), gaps


@given(st.floats(-3, 3), st.floats(0.0, 1.0))
def test_control_continuous_in_time(x, s):
    sched, _ = scalar_schedule()
    a = tracking_control(sched, [x], s)[0]
    b = tracking_control(sched, [x], min(s + 1e-7, 1.0))[0]
    assert abs(a - b) <= 1e-5 * (1 + abs(x))
