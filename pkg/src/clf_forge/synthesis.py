"""Counterexample-guided synthesis of a CLF and an LQR switching controller.

The loop keeps a database of demonstrations, an inequality store and a
candidate CLF. Each round falsifies positivity of the candidate (adding rows
until differential evolution finds nothing), then samples initial states
until one fails the sufficient-decrease test. A failing state becomes a new
demonstration. The run is accepted after ``accept_n`` consecutive successes.

With ``mode="known_clf"`` the candidate is fixed and only the demonstration
set grows.
"""
from __future__ import annotations

import json
import logging
import os
import time
from contextlib import contextmanager
from dataclasses import dataclass, field, asdict
from typing import Callable, Optional

import numpy as np

from . import benchmarks
from .clf_learner import (DECREASE, POSITIVITY, CandidateCLF, InequalityStore, LearnerInfeasible,
                          PolynomialBasis, add_compatibility_constraints, add_positivity_counterexample,
                          is_discretely_compatible, learn)
from .config import SamplingBudget, SynthesisConfig
from .demonstrator import DemonstrationFailed, DiscreteDemonstration, demonstrate
from .dynamics import IntegrationDiverged
from .falsifier import falsify_decrease, falsify_positivity, rule_of_three_interval, sample_state
from .lqr_tracking import equilibrium_lqr
from .switching import AssignmentRule, DemoDatabase, SwitchingController, SwitchingPolicy

log = logging.getLogger(__name__)

ACCEPTED = "Accepted"
LEARNER_INFEASIBLE = "LearnerInfeasible"
DEMONSTRATION_FAILED = "DemonstrationFailed"
BUDGET_EXHAUSTED = "BudgetExhausted"

CHECKPOINT_FORMAT = "clf-forge-checkpoint"
CHECKPOINT_VERSION = 1


class CheckpointError(ValueError):
    pass


class ConfigMismatch(CheckpointError):
    pass


class _Stop(Exception):
    def __init__(self, outcome, message):
        super().__init__(message)
        self.outcome = outcome


@dataclass
class SynthesisReport:
    benchmark: str
    outcome: str
    message: str
    config_digest: str
    candidate: Optional[dict]
    demonstrations: int
    demonstration_states: int
    inequalities: int
    positivity_rows: int
    decrease_rows: int
    counterexamples_positivity: int
    counterexamples_decrease: int
    decrease_simulations: int
    decrease_failures: int
    relearns: int
    final_streak: int
    accept_n: int
    failure_probability_bound: float
    compatible_with_all_demonstrations: Optional[bool]

    def to_json(self):
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"


@dataclass
class SynthesisState:
    """Everything needed to continue a run deterministically."""

    db: DemoDatabase
    store: Optional[InequalityStore]
    candidate: Optional[CandidateCLF]
    next_index: int = 0
    streak: int = 0
    samples: int = 0
    failures: int = 0
    relearns: int = 0
    positivity_calls: int = 0
    cex_positivity: int = 0
    cex_decrease: int = 0
    oversampled: int = 0
    timings: dict = field(default_factory=lambda: {"demonstrator": 0.0, "learner": 0.0,
                                                    "falsifier_positivity": 0.0, "falsifier_decrease": 0.0})


@dataclass
class SynthesisResult:
    controller: Optional[SwitchingController]
    candidate: Optional[CandidateCLF]
    report: SynthesisReport
    state: SynthesisState

    @property
    def timings(self):
        return dict(self.state.timings)


@dataclass
class Problem:
    """System, task cost, regions and tracking weights of one run."""

    sys: object
    cost: object
    region: object
    weights: object

    @classmethod
    def from_config(cls, cfg):
        sys, cost, region = benchmarks.build(cfg)
        return cls(sys, cost, region, benchmarks.tracking_weights(cfg, sys))


def seed_points(region, kind="axes"):
    """``2n`` states at half the box radius along each axis, or none."""
    if kind == "none":
        return []
    if kind != "axes":
        raise ValueError(f"unknown seed set {kind!r}")
    center = 0.5 * (region.D_low + region.D_high)
    radius = 0.5 * (region.D_high - region.D_low)
    pts = []
    for i in range(region.n):
        for sign in (1.0, -1.0):
            x = center.copy()
            x[i] += sign * 0.5 * radius[i]
            if not region.in_H(x):
                pts.append(x)
    return pts


def make_basis(cfg, sys):
    names = sys.state_names
    if cfg.basis_exponents is not None:
        return PolynomialBasis(sys.state_dim, exponents=cfg.basis_exponents, names=names)
    return PolynomialBasis(sys.state_dim, cfg.basis_degree, cfg.even_only, names=names)


class Synthesizer:
    def __init__(self, cfg: SynthesisConfig, problem: Optional[Problem] = None,
                 demonstrator: Optional[Callable] = None, checkpoint_path=None, log_file=None):
        self.cfg = cfg
        self.problem = problem or Problem.from_config(cfg)
        p = self.problem
        self.basis = make_basis(cfg, p.sys)
        self.eq_lqr = equilibrium_lqr(p.sys, p.weights, cfg.h)
        self.policy = SwitchingPolicy(cfg.t_min, cfg.gamma, cfg.eps0, cfg.h)
        self.rule = AssignmentRule(cfg.prefilter_k)
        self.budget = SamplingBudget(cfg.accept_n, cfg.max_total_samples, cfg.rng_seed)
        self._demonstrate = demonstrator or (
            lambda x0: demonstrate(p.sys, p.cost, p.region, x0, cfg.demonstrator, cfg.h,
                                   cfg.horizon_steps, p.weights))
        self.checkpoint_path = checkpoint_path
        self.log_file = log_file
        self.state = None

    @contextmanager
    def _timed(self, key):
        t0 = time.perf_counter()
        try:
            yield
        finally:
            self.state.timings[key] += time.perf_counter() - t0

    @property
    def learning(self):
        return self.cfg.mode == "learn_clf"

    def fresh_state(self):
        p = self.problem
        db = DemoDatabase(p.sys, p.weights, self.cfg.h, self.cfg.t_min_steps, self.cfg.suffix_expansion,
                          self.cfg.short_suffixes)
        if self.learning:
            return SynthesisState(db, InequalityStore(len(self.basis), self.cfg.delta_margin), None)
        return SynthesisState(db, None, CandidateCLF.from_dict(self.cfg.known_clf))

    def controller(self):
        p = self.problem
        return SwitchingController(p.sys, self.state.db, self.state.candidate, self.policy, p.region,
                                   self.eq_lqr, self.rule)

    # -- phases -----------------------------------------------------------

    def add_demonstration(self, x0):
        st = self.state
        if len(st.db) >= self.cfg.max_demonstrations:
            raise _Stop(BUDGET_EXHAUSTED, f"demonstration cap {self.cfg.max_demonstrations} reached")
        with self._timed("demonstrator"):
            try:
                demo = self._demonstrate(np.asarray(x0, dtype=float))
            except (DemonstrationFailed, IntegrationDiverged) as exc:
                raise _Stop(DEMONSTRATION_FAILED, f"demonstration from {list(x0)} failed: {exc}") from None
        demo_id = st.db.add(demo)
        if self.learning:
            add_compatibility_constraints(st.store, self.basis, demo, demo_id, st.candidate)
        log.info("demonstration %d from %s: %d samples", demo_id, np.round(x0, 4).tolist(), len(demo))
        return demo

    def relearn(self):
        """Chebyshev-center candidate that is compatible with every stored
        demonstration and passes the positivity falsifier."""
        st, cfg = self.state, self.cfg
        region = self.problem.region
        while True:
            if st.relearns >= cfg.relearn_cap:
                raise _Stop(LEARNER_INFEASIBLE, f"relearn cap {cfg.relearn_cap} reached")
            with self._timed("learner"):
                try:
                    st.candidate = learn(st.store, self.basis, -cfg.p_bound, cfg.p_bound)
                except LearnerInfeasible as exc:
                    raise _Stop(LEARNER_INFEASIBLE, str(exc)) from None
                st.relearns += 1
                # rows skipped by thinning may be violated by the new center
                added = sum(add_compatibility_constraints(st.store, self.basis, d, i, st.candidate)
                            for i, d in enumerate(st.db.demos) if not is_discretely_compatible(st.candidate, d))
            if added:
                continue
            with self._timed("falsifier_positivity"):
                x = falsify_positivity(st.candidate, region, cfg.de, key=(cfg.rng_seed, st.positivity_calls))
                st.positivity_calls += 1
            if x is None:
                log.info("relearn %d: %d rows, radius %.3g", st.relearns, len(st.store), st.candidate.radius)
                return
            st.cex_positivity += 1
            add_positivity_counterexample(st.store, self.basis, x)

    def needs_relearn(self):
        st = self.state
        if st.candidate is None:
            return True
        return any(not is_discretely_compatible(st.candidate, d) for d in st.db.demos)

    def seed(self):
        for x0 in seed_points(self.problem.region, self.cfg.seed_demos):
            self.add_demonstration(x0)
        if self.learning:
            self.relearn()

    def loop(self):
        st, cfg = self.state, self.cfg
        chunk = cfg.positivity_check_every if cfg.periodic_positivity_check else None
        while True:
            with self._timed("falsifier_decrease"):
                res = falsify_decrease(self.controller(), self.problem.region, self.budget, st.next_index,
                                       st.streak, st.samples, st.failures, cfg.batch_size, cfg.workers,
                                       limit=chunk, log_file=self.log_file)
            st.next_index, st.streak, st.samples, st.failures = res.next_index, res.streak, res.samples, res.failures
            if res.status == "exhausted":
                raise _Stop(BUDGET_EXHAUSTED, f"{st.samples} decrease samples without acceptance")
            if res.status == "paused":
                with self._timed("falsifier_positivity"):
                    x = falsify_positivity(st.candidate, self.problem.region, cfg.de,
                                           key=(cfg.rng_seed, st.positivity_calls))
                    st.positivity_calls += 1
                if x is not None:
                    st.cex_positivity += 1
                    st.streak = 0
                    add_positivity_counterexample(st.store, self.basis, x)
                    self.relearn()
            elif res.status == "counterexample":
                st.cex_decrease += 1
                log.info("decrease counterexample %s after %d samples (%s)",
                         np.round(res.counterexample, 4).tolist(), st.samples, res.record.outcome)
                self.add_demonstration(res.counterexample)
                if self.learning and self.needs_relearn():
                    self.relearn()
            elif res.status == "accepted":
                if st.oversampled >= cfg.performance_oversampling:
                    return
                # extra demonstrations from further samples, then re-verify
                while st.oversampled < cfg.performance_oversampling:
                    self.add_demonstration(sample_state(self.problem.region, cfg.rng_seed, st.next_index))
                    st.next_index += 1
                    st.oversampled += 1
                if self.learning and self.needs_relearn():
                    self.relearn()
                st.streak = 0
            self.save_checkpoint()

    # -- entry points -----------------------------------------------------

    def run(self, state=None):
        if state is None:
            self.state = self.fresh_state()
            try:
                self.seed()
            except _Stop as stop:
                return self._finish(stop.outcome, str(stop))
            self.save_checkpoint()
        else:
            self.state = state
        try:
            self.loop()
        except _Stop as stop:
            return self._finish(stop.outcome, str(stop))
        return self._finish(ACCEPTED, f"{self.state.streak} consecutive successful samples")

    def _finish(self, outcome, message):
        st, cfg = self.state, self.cfg
        self.save_checkpoint()
        compatible = None
        if st.candidate is not None:
            compatible = all(is_discretely_compatible(st.candidate, d) for d in st.db.demos)
        store = st.store
        report = SynthesisReport(
            benchmark=cfg.benchmark, outcome=outcome, message=message, config_digest=cfg.digest(),
            candidate=None if st.candidate is None else st.candidate.to_dict(),
            demonstrations=len(st.db), demonstration_states=int(sum(len(d) for d in st.db.demos)),
            inequalities=0 if store is None else len(store),
            positivity_rows=0 if store is None else store.count(POSITIVITY),
            decrease_rows=0 if store is None else store.count(DECREASE),
            counterexamples_positivity=st.cex_positivity, counterexamples_decrease=st.cex_decrease,
            decrease_simulations=st.samples, decrease_failures=st.failures, relearns=st.relearns,
            final_streak=st.streak, accept_n=cfg.accept_n,
            failure_probability_bound=1.0 - rule_of_three_interval(cfg.accept_n)[0],
            compatible_with_all_demonstrations=compatible)
        ctl = self.controller() if st.candidate is not None else None
        log.info("synthesis finished: %s (%s)", outcome, message)
        return SynthesisResult(ctl, st.candidate, report, st)

    # -- persistence ------------------------------------------------------

    def checkpoint_dict(self):
        st = self.state
        return {
            "format": CHECKPOINT_FORMAT,
            "version": CHECKPOINT_VERSION,
            "config_digest": self.cfg.digest(),
            "config": self.cfg.to_dict(),
            "library": st.db.to_dict(),
            "inequalities": None if st.store is None else st.store.to_dict(),
            "candidate": None if st.candidate is None else st.candidate.to_dict(),
            "sampler": {"next_index": st.next_index, "streak": st.streak, "samples": st.samples,
                        "failures": st.failures},
            "counters": {"relearns": st.relearns, "positivity_calls": st.positivity_calls,
                         "cex_positivity": st.cex_positivity, "cex_decrease": st.cex_decrease,
                         "oversampled": st.oversampled},
        }

    def save_checkpoint(self):
        if self.checkpoint_path is None or self.state is None:
            return
        tmp = f"{self.checkpoint_path}.tmp"
        with open(tmp, "w") as fh:
            json.dump(self.checkpoint_dict(), fh)
        os.replace(tmp, self.checkpoint_path)

    def state_from_checkpoint(self, d):
        if not isinstance(d, dict) or d.get("format") != CHECKPOINT_FORMAT:
            raise CheckpointError("not a synthesis checkpoint")
        if d.get("version") != CHECKPOINT_VERSION:
            raise CheckpointError(f"unsupported checkpoint version {d.get('version')}")
        if d.get("config_digest") != self.cfg.digest():
            raise ConfigMismatch("checkpoint was written with a different configuration")
        p = self.problem
        try:
            db = DemoDatabase.from_dict(d["library"], p.sys, p.weights, self.cfg.t_min_steps,
                                        self.cfg.suffix_expansion, self.cfg.short_suffixes)
            store = None if d["inequalities"] is None else InequalityStore.from_dict(d["inequalities"])
            cand = None if d["candidate"] is None else CandidateCLF.from_dict(d["candidate"])
            st = SynthesisState(db, store, cand, **d["sampler"], **d["counters"])
        except (KeyError, TypeError, ValueError) as exc:
            raise CheckpointError(f"malformed checkpoint: {exc}") from None
        return st


def load_checkpoint(path):
    try:
        with open(path) as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"cannot parse checkpoint {path}: {exc}") from None


def synthesize(cfg, problem=None, demonstrator=None, checkpoint_path=None, log_file=None):
    """Run synthesis from scratch; returns a :class:`SynthesisResult`."""
    return Synthesizer(cfg, problem, demonstrator, checkpoint_path, log_file).run()


def resume(checkpoint, cfg=None, problem=None, demonstrator=None, checkpoint_path=None, log_file=None):
    """Continue a run from a checkpoint (path or dict). ``cfg`` defaults to
    the configuration stored in the checkpoint."""
    d = load_checkpoint(checkpoint) if not isinstance(checkpoint, dict) else checkpoint
    if cfg is None:
        try:
            cfg = SynthesisConfig.from_dict(d["config"])
        except (KeyError, TypeError, ValueError) as exc:
            raise CheckpointError(f"malformed checkpoint config: {exc}") from None
    syn = Synthesizer(cfg, problem, demonstrator, checkpoint_path, log_file)
    return syn.run(syn.state_from_checkpoint(d))


def build_controller(cfg, library, candidate, problem=None):
    """Switching controller from a saved demonstration library (dict) and a
    candidate (dict or :class:`CandidateCLF`)."""
    p = problem or Problem.from_config(cfg)
    db = DemoDatabase.from_dict(library, p.sys, p.weights, cfg.t_min_steps, cfg.suffix_expansion,
                                cfg.short_suffixes)
    if isinstance(candidate, dict):
        candidate = CandidateCLF.from_dict(candidate)
    policy = SwitchingPolicy(cfg.t_min, cfg.gamma, cfg.eps0, cfg.h)
    return SwitchingController(p.sys, db, candidate, policy, p.region, equilibrium_lqr(p.sys, p.weights, cfg.h),
                               AssignmentRule(cfg.prefilter_k))
