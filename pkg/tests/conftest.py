import time

import numpy as np
import pytest
import sympy as sp
from hypothesis import HealthCheck, settings

from clf_forge import benchmarks
from clf_forge.dynamics import ControlSystem, CostSpec, Region
from clf_forge.synthesis import synthesize

settings.register_profile("default", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def integrator(n=1):
    """``xdot = u`` with ``n`` states and ``n`` inputs."""
    x = sp.symbols(f"x0:{n}", real=True)
    u = sp.symbols(f"u0:{n}", real=True)
    return ControlSystem(f"integrator{n}", x, u, list(u))


def decay():
    """``xdot = -x``; the input does not enter."""
    x, u = sp.symbols("x u", real=True)
    return ControlSystem("decay", [x], [u], [-x])


def double_integrator():
    x1, x2, u = sp.symbols("x1 x2 u", real=True)
    return ControlSystem("double_integrator", [x1, x2], [u], [x2, u])


def box_region(n, m, d=2.0, s=50.0, eps0=0.05):
    return Region([-d] * n, [d] * n, [-s] * (n + m), [s] * (n + m), eps0)


@pytest.fixture(scope="session")
def pendulum():
    cfg = benchmarks.default_config("pendulum", accept_n=2000)
    sys, cost, region = benchmarks.build(cfg)
    return cfg, sys, cost, region, benchmarks.tracking_weights(cfg, sys)


@pytest.fixture(scope="session")
def pendulum_run(pendulum):
    """Desk-scale pendulum synthesis shared by the switching, eval and acceptance tests."""
    cfg = pendulum[0]
    t0 = time.perf_counter()
    result = synthesize(cfg)
    return result, time.perf_counter() - t0


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def unit_cost():
    return lambda n, m: CostSpec(np.eye(n), np.eye(m))


def grid_failures(controller, region, n=41):
    """Grid points of ``D`` minus ``H`` whose first tracking segment fails the
    strict decrease test."""
    from clf_forge.falsifier import check_sample
    axes = [np.linspace(lo, hi, n) for lo, hi in zip(region.D_low, region.D_high)]
    pts = np.array(np.meshgrid(*axes, indexing="ij")).reshape(len(axes), -1).T
    pts = pts[np.linalg.norm(pts, axis=1) > region.eps0]
    return np.array([x for x in pts if not check_sample(controller, x).ok]), axes


@pytest.fixture(scope="session")
def withheld(pendulum, pendulum_run):
    """Accepted pendulum library with one demonstration removed so that a
    patch of ``D`` is uncovered, plus the exhaustive grid scan locating it.

    Candidates are tried from the last demonstration backwards (the late,
    counterexample-driven ones cover the corners)."""
    from clf_forge.synthesis import build_controller
    cfg = pendulum[0]
    result = pendulum_run[0]
    lib = result.state.db.to_dict()
    demos = lib["demonstrations"]
    for i in reversed(range(len(demos))):
        reduced = dict(lib, demonstrations=demos[:i] + demos[i + 1:])
        ctl = build_controller(cfg, reduced, result.candidate)
        fails, axes = grid_failures(ctl, ctl.region)
        if len(fails):
            spacing = np.array([a[1] - a[0] for a in axes])
            return ctl, fails, spacing, i
    raise RuntimeError("every single demonstration is redundant")
