import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from clf_forge.clf_learner import CandidateCLF, PolynomialBasis
from clf_forge.config import DEConfig, SamplingBudget
from clf_forge.falsifier import (check_sample, de_minimize, falsify_decrease, falsify_positivity,
                                 rule_of_three_interval, sample_state)
from clf_forge.lqr_tracking import equilibrium_lqr
from clf_forge.switching import DemoDatabase, SwitchingController, SwitchingPolicy


class Pocket:
    """``(theta - 3.9)^2 + theta_dot^2 - 0.001``: negative only in a disc of
    radius 0.032 by the edge of D."""

    def __call__(self, X):
        X = np.atleast_2d(X)
        return (X[:, 0] - 3.9) ** 2 + X[:, 1] ** 2 - 0.001


def quad(p):
    return CandidateCLF(PolynomialBasis(2, degree=2, even_only=True), p)


def test_positive_definite_candidate_not_falsified(pendulum):
    assert falsify_positivity(quad([1.0, 0.0, 1.0]), pendulum[3], DEConfig()) is None


def test_indefinite_candidate_falsified(pendulum):
    region = pendulum[3]
    x = falsify_positivity(quad([1.0, 0.0, -1.0]), region, DEConfig())
    assert x is not None
    assert abs(x[1]) >= abs(x[0])
    assert region.in_D(x) and not region.in_H(x)


@pytest.mark.parametrize("seed", range(5))
def test_planted_pocket_found(pendulum, seed):
    region = pendulum[3]
    x = falsify_positivity(Pocket(), region, DEConfig(rng_seed=seed))
    assert x is not None and Pocket()(x)[0] <= 0


def test_de_respects_box_and_ball():
    cfg = DEConfig(population=12, generations=30)
    seen = []

    def f(X):
        seen.append(X.copy())
        return np.linalg.norm(X, axis=1)

    x, val = de_minimize(f, [-1, -1], [1, 1], cfg, np.random.default_rng(0), eps0=0.3)
    allx = np.vstack(seen)
    assert np.all(np.abs(allx) <= 1) and np.all(np.linalg.norm(allx, axis=1) > 0.3)
    assert 0.3 < val < 0.35


def test_de_config_validation():
    with pytest.raises(ValueError):
        DEConfig(population=3)
    with pytest.raises(ValueError):
        DEConfig(F_weight=2.5)
    with pytest.raises(ValueError):
        SamplingBudget(acceptance_threshold=0)


def test_rule_of_three():
    assert 1 - rule_of_three_interval(20000)[0] == pytest.approx(1.5e-4)
    assert rule_of_three_interval(3) == (0.0, 1.0)
    assert 1 - rule_of_three_interval(300)[0] == pytest.approx(0.01)
    with pytest.raises(ValueError):
        rule_of_three_interval(0)


def test_empty_database_fails_every_sample(pendulum):
    cfg, sys, _, region, w = pendulum
    db = DemoDatabase(sys, w, cfg.h, cfg.t_min_steps)
    ctl = SwitchingController(sys, db, quad([1.0, 0.0, 1.0]), SwitchingPolicy(cfg.t_min, cfg.gamma, cfg.eps0, cfg.h),
                              region, equilibrium_lqr(sys, w, cfg.h))
    res = falsify_decrease(ctl, region, SamplingBudget(10, 100, 0))
    assert res.status == "counterexample" and res.samples == 1
    assert not check_sample(ctl, [1.0, 1.0]).ok


def test_demo_start_states_succeed(pendulum_run):
    ctl = pendulum_run[0].controller
    for demo in ctl.db.demos:
        assert check_sample(ctl, demo.states[0]).ok


def test_accepted_streak_is_exact(pendulum, pendulum_run):
    ctl = pendulum_run[0].controller
    res = falsify_decrease(ctl, pendulum[3], SamplingBudget(150, 1000, 7))
    assert res.status == "accepted" and res.streak == 150 and res.samples == 150


def test_budget_exhaustion_and_pause(pendulum, pendulum_run):
    ctl = pendulum_run[0].controller
    region = pendulum[3]
    assert falsify_decrease(ctl, region, SamplingBudget(500, 40, 7)).status == "exhausted"
    part = falsify_decrease(ctl, region, SamplingBudget(100, 1000, 7), limit=30)
    assert part.status == "paused" and part.next_index == 30
    rest = falsify_decrease(ctl, region, SamplingBudget(100, 1000, 7), start_index=part.next_index,
                            streak=part.streak, samples=part.samples)
    whole = falsify_decrease(ctl, region, SamplingBudget(100, 1000, 7))
    assert (rest.status, rest.streak, rest.samples) == (whole.status, whole.streak, whole.samples)


def test_decrease_falsifier_deterministic_and_worker_invariant(pendulum, withheld, tmp_path):
    ctl = withheld[0]
    region = pendulum[3]
    budget = SamplingBudget(2000, 20000, 99)
    logs = []
    runs = []
    for workers in (1, 1, 2):
        path = tmp_path / f"log{len(runs)}.jsonl"
        with open(path, "w") as fh:
            runs.append(falsify_decrease(ctl, region, budget, workers=workers, log_file=fh))
        logs.append(path.read_text())
    assert runs[0].status == "counterexample"
    for r in runs[1:]:
        assert np.array_equal(r.counterexample, runs[0].counterexample)
        assert (r.samples, r.next_index) == (runs[0].samples, runs[0].next_index)
    assert logs[0] == logs[1] == logs[2]
    rec = json.loads(logs[0].splitlines()[-1])
    assert set(rec) == {"sample_index", "x0", "outcome", "assigned_demo_id", "switch_time"}


@given(st.integers(0, 2**32), st.integers(0, 10**6))
def test_samples_lie_in_D_minus_H(seed, index):
    from clf_forge import benchmarks
    region = benchmarks.build(benchmarks.default_config("pendulum"))[2]
    x = sample_state(region, seed, index)
    assert region.in_D(x) and not region.in_H(x)
    assert np.array_equal(x, sample_state(region, seed, index))
