"""Counterexample search for CLF positivity and for sufficient decrease.

Positivity is attacked with best/1/bin differential evolution minimizing
``L`` over ``D`` minus the ``eps0``-ball. Decrease is checked on uniformly
sampled initial states: each sample tracks its assigned target up to the
first admissible switching instant. Sample ``i`` draws its state from its
own seed stream, so outcomes do not depend on batching or worker count.
"""
from __future__ import annotations

import json
import logging
import multiprocessing as mp
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, asdict
from typing import Optional

import numpy as np

from .dynamics import IntegrationDiverged
from .switching import REACHED_H, SWITCH, EmptyDatabase

log = logging.getLogger(__name__)

SUCCESS = "success"


def _seeded_rng(seed, *key):
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key)))


def _resample_outside_ball(rng, X, low, high, eps0):
    bad = np.linalg.norm(X, axis=1) <= eps0
    while bad.any():
        X[bad] = rng.uniform(low, high, size=(int(bad.sum()), len(low)))
        bad = np.linalg.norm(X, axis=1) <= eps0
    return X


def de_minimize(fun, low, high, cfg, rng, eps0=0.0, target=None):
    """best/1/bin differential evolution of a vectorized ``fun`` over a box
    minus the ball of radius ``eps0``.

    Stops early once a value ``<= target`` appears. Returns ``(x, f)`` for
    the best point seen.
    """
    low = np.asarray(low, dtype=float)
    high = np.asarray(high, dtype=float)
    NP, dim = cfg.population, len(low)
    pop = _resample_outside_ball(rng, rng.uniform(low, high, size=(NP, dim)), low, high, eps0)
    fit = fun(pop)
    b = int(np.argmin(fit))
    for _ in range(cfg.generations):
        if target is not None and fit[b] <= target:
            break
        # two distinct donors per member, both different from the member
        r1 = rng.integers(0, NP - 1, size=NP)
        r1 += r1 >= np.arange(NP)
        r2 = rng.integers(0, NP - 2, size=NP)
        lo_, hi_ = np.minimum(r1, np.arange(NP)), np.maximum(r1, np.arange(NP))
        r2 += r2 >= lo_
        r2 += r2 >= hi_
        mutant = pop[b] + cfg.F_weight * (pop[r1] - pop[r2])
        cross = rng.random((NP, dim)) < cfg.crossover
        cross[np.arange(NP), rng.integers(0, dim, size=NP)] = True
        trial = np.clip(np.where(cross, mutant, pop), low, high)
        trial = _resample_outside_ball(rng, trial, low, high, eps0)
        f_trial = fun(trial)
        better = f_trial <= fit
        pop[better] = trial[better]
        fit[better] = f_trial[better]
        b = int(np.argmin(fit))
    return pop[b].copy(), float(fit[b])


def falsify_positivity(candidate, region, de, key=()):
    """A point of ``D`` minus ``H`` with ``L <= 0``, or ``None``.

    ``key`` extends the DE seed so repeated calls explore differently.
    """
    for restart in range(de.restarts):
        rng = _seeded_rng(de.rng_seed, *key, restart)
        x, f = de_minimize(candidate, region.D_low, region.D_high, de, rng, region.eps0, target=0.0)
        if f <= 0:
            return x
    return None


def rule_of_three_interval(N):
    """95% interval for the success probability after ``N`` failure-free samples.

    Failure probability is at most ``3/N``.
    """
    if N < 1:
        raise ValueError("N must be >= 1")
    return max(0.0, 1.0 - 3.0 / N), 1.0


@dataclass
class SampleRecord:
    sample_index: int
    x0: list
    outcome: str
    assigned_demo_id: Optional[int]
    switch_time: Optional[float]

    @property
    def ok(self):
        return self.outcome == SUCCESS


@dataclass
class DecreaseResult:
    """``status`` is ``accepted``, ``counterexample``, ``paused`` (sample
    limit of this call reached) or ``exhausted`` (total budget spent)."""

    status: str
    counterexample: Optional[np.ndarray]
    next_index: int
    streak: int
    samples: int
    failures: int
    record: Optional[SampleRecord] = None


def sample_state(region, seed, index):
    return region.sample(_seeded_rng(seed, index))


def check_sample(controller, x0, index=0):
    """Track the target assigned to ``x0`` to the first admissible switching
    instant and test strict sufficient decrease there."""
    x0 = np.asarray(x0, dtype=float)
    try:
        seg = controller.segment(x0, strict=True)
    except EmptyDatabase:
        return SampleRecord(index, x0.tolist(), "EmptyDatabase", None, None)
    except IntegrationDiverged:
        return SampleRecord(index, x0.tolist(), "IntegrationDiverged", None, None)
    ok = seg.status in (SWITCH, REACHED_H)
    t = seg.steps * controller.policy.h if seg.status == SWITCH else None
    return SampleRecord(index, x0.tolist(), SUCCESS if ok else seg.status, int(seg.target[0]), t)


_WORKER_CTL = None


def _init_worker(controller):
    global _WORKER_CTL
    _WORKER_CTL = controller


def _work(args):
    index, x0 = args
    return check_sample(_WORKER_CTL, x0, index)


def falsify_decrease(controller, region, budget, start_index=0, streak=0, samples=0,
                     failures=0, batch_size=64, workers=1, limit=None, log_file=None):
    """Sample until a counterexample, ``N`` consecutive successes, the total
    budget, or ``limit`` samples in this call.

    Counters carry over between calls; results are reconciled in sample-index
    order, and samples after the first failure of a batch are discarded.
    """
    N = budget.acceptance_threshold
    index = start_index
    used = 0
    pool = None
    if workers > 1:
        pool = ProcessPoolExecutor(workers, mp_context=mp.get_context("fork"),
                                   initializer=_init_worker, initargs=(controller,))
    try:
        while True:
            if streak >= N:
                return DecreaseResult("accepted", None, index, streak, samples, failures)
            if samples >= budget.max_total:
                return DecreaseResult("exhausted", None, index, streak, samples, failures)
            if limit is not None and used >= limit:
                return DecreaseResult("paused", None, index, streak, samples, failures)
            size = min(batch_size, N - streak, budget.max_total - samples)
            if limit is not None:
                size = min(size, limit - used)
            jobs = [(index + j, sample_state(region, budget.rng_seed, index + j)) for j in range(size)]
            if pool is None:
                results = [check_sample(controller, x0, i) for i, x0 in jobs]
            else:
                results = list(pool.map(_work, jobs, chunksize=max(1, size // (4 * workers))))
            for rec in results:
                index += 1
                used += 1
                samples += 1
                if log_file is not None:
                    log_file.write(json.dumps(asdict(rec)) + "\n")
                if rec.ok:
                    streak += 1
                else:
                    failures += 1
                    return DecreaseResult("counterexample", np.array(rec.x0), index, 0, samples, failures, rec)
    finally:
        if pool is not None:
            pool.shutdown()
