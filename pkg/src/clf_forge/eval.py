"""Closed-loop cost evaluation and the Sontag-formula baseline.

Every controller hands off to the equilibrium LQR inside the ``eps0``-ball
and runs until ``||x|| <= eps0/10``. The cost is the trapezoidal integral of
``x'Qx + u'Ru`` along the samples plus the LQR tail ``x'P x`` at the end, so
costs do not depend on where the simulation stops.
"""
from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field

import numpy as np

from .clf_learner import (CandidateCLF, InequalityStore, LearnerInfeasible, PolynomialBasis,
                          add_compatibility_constraints, add_positivity_counterexample, learn)
from .demonstrator import DemonstrationFailed, demonstrate
from .dynamics import IntegrationDiverged, Region, closed_loop_step
from .falsifier import _seeded_rng, de_minimize, falsify_positivity
from .switching import STABILIZED, SwitchingController

log = logging.getLogger(__name__)

NOT_STABILIZED = "NotStabilized"


def trapezoid_cost(cost, states, inputs, h):
    X = np.atleast_2d(states)
    U = np.asarray(inputs, dtype=float).reshape(len(X), -1)
    g = np.einsum("ij,jk,ik->i", X, cost.Q, X) + np.einsum("ij,jk,ik->i", U, cost.R, U)
    if len(g) < 2:
        return 0.0
    return float(h * (0.5 * g[0] + g[1:-1].sum() + 0.5 * g[-1]))


@dataclass
class CostResult:
    cost: float
    status: str
    steps: int

    @property
    def stabilized(self):
        return self.status == STABILIZED


class StaticController:
    """A static feedback ``u(x)`` followed by the equilibrium LQR inside the ball.

    ``substeps`` integrates each sampling interval in that many RK4 steps,
    with the law re-evaluated at every stage; high-gain laws such as
    Sontag's formula need it. States are logged at the finer step ``dt``.
    """

    def __init__(self, sys, law, region, eq_lqr, h, eps0, substeps=1):
        self.sys, self.law, self.region, self.eq_lqr = sys, law, region, eq_lqr
        self.h, self.eps0 = h, eps0
        self.substeps = int(substeps)
        if self.substeps < 1:
            raise ValueError("substeps must be >= 1")

    @property
    def dt(self):
        return self.h / self.substeps

    def rollout(self, x0, step_cap):
        """Returns ``(states, inputs, status)`` with one input per state;
        ``step_cap`` counts sampling intervals."""
        x = np.asarray(x0, dtype=float)
        xs, us = [x], []
        law = self.law
        for _ in range(step_cap * self.substeps):
            r = np.linalg.norm(x)
            if r <= self.eps0 / 10:
                break
            if law is not self.eq_lqr and r <= self.eps0:
                law = self.eq_lqr
            x_next, u = closed_loop_step(self.sys, x, 0.0, self.dt, lambda z, t: law(z))
            us.append(u)
            if not self.region.in_S(x, u):
                return np.array(xs), np.array(us), "LeftS"
            x = x_next
            xs.append(x)
        else:
            if np.linalg.norm(x) > self.eps0 / 10:
                return np.array(xs), np.array(us + [law(x)]), NOT_STABILIZED
        us.append(self.eq_lqr(x))
        return np.array(xs), np.array(us), STABILIZED


def closed_loop_cost(sys, cost, controller, x0, h, region, step_cap, eq_lqr=None):
    """Cost of ``controller`` from ``x0``: trapezoid plus LQR tail, or NaN
    with a non-stabilized status."""
    dt = h
    try:
        if isinstance(controller, SwitchingController):
            eq_lqr = controller.eq_lqr
            max_switches = step_cap // max(controller.policy.t_min_steps, 1) + 1
            tr = controller.run(x0, max_switches=max_switches, handoff_steps=step_cap)
            states, inputs, status = tr.states, tr.inputs, tr.status
        else:
            states, inputs, status = controller.rollout(x0, step_cap)
            eq_lqr, dt = controller.eq_lqr, controller.dt
    except IntegrationDiverged:
        return CostResult(float("nan"), NOT_STABILIZED, 0)
    if status != STABILIZED:
        return CostResult(float("nan"), status if status else NOT_STABILIZED, len(states) - 1)
    P = eq_lqr.value_matrix(cost.Q, cost.R, h)
    xe = states[-1]
    total = trapezoid_cost(cost, states, inputs, dt) + float(xe @ P @ xe)
    return CostResult(total, STABILIZED, len(states) - 1)


class SontagController:
    """Sontag's universal formula for a control-affine system,

    ``u = -(a + sqrt(a^2 + x'Qx b^2)) / b * G'grad L`` with
    ``a = grad L . F`` and ``b = |G'grad L|^2``; zero when ``b <= 1e-12``.
    """

    B_TOL = 1e-12

    def __init__(self, sys, candidate, Q=None):
        if not sys.is_control_affine:
            raise ValueError(f"{sys.name} has no control-affine form")
        self.sys = sys
        self.candidate = candidate
        self.Q = np.eye(sys.state_dim) if Q is None else np.asarray(Q, dtype=float)

    def terms(self, x):
        F, G = self.sys.affine_split(x)
        g = self.candidate.gradient(x)
        LgV = G.T @ g
        return float(g @ F), float(LgV @ LgV), LgV

    def __call__(self, x, t=0.0):
        return sontag_control(self, x)


def sontag_control(ctrl, x):
    x = np.asarray(x, dtype=float)
    a, b, LgV = ctrl.terms(x)
    if b <= SontagController.B_TOL:
        return np.zeros(ctrl.sys.input_dim)
    q = float(x @ ctrl.Q @ x)
    return -(a + np.sqrt(a * a + q * b * b)) / b * LgV


def _sontag_violation(sys, candidate, X):
    """Small where ``G'grad L`` nearly vanishes while ``grad L . F >= 0``."""
    out = np.empty(len(X))
    for i, x in enumerate(X):
        F, G = sys.affine_split(x)
        g = candidate.gradient(x)
        LgV = G.T @ g
        scale = np.linalg.norm(g) + 1e-12
        bn = float(LgV @ LgV) / (scale**2 * (np.linalg.norm(G) ** 2 + 1e-12))
        an = float(g @ F) / (scale * (np.linalg.norm(F) + 1e-12))
        out[i] = bn + max(0.0, -an)
    return out


def falsify_sontag_condition(sys, candidate, region, de, key=(), b_tol=1e-4):
    """A state where the CLF condition ``b = 0 => a < 0`` fails (up to
    ``b_tol`` in normalized ``b``), or ``None``."""
    fun = lambda X: _sontag_violation(sys, candidate, np.atleast_2d(X))
    for restart in range(de.restarts):
        rng = _seeded_rng(de.rng_seed, *key, restart)
        x, f = de_minimize(fun, region.D_low, region.D_high, de, rng, region.eps0, target=0.5 * b_tol)
        if f < b_tol:
            return x
    return None


def baseline_region(region, box):
    """``box`` as the region of interest, with ``S`` widened to contain it."""
    lo, hi = np.asarray(box[0], dtype=float), np.asarray(box[1], dtype=float)
    n = len(lo)
    S_lo = region.S_low.copy()
    S_hi = region.S_high.copy()
    S_lo[:n] = np.minimum(S_lo[:n], 1.5 * lo)
    S_hi[:n] = np.maximum(S_hi[:n], 1.5 * hi)
    return Region(lo, hi, S_lo, S_hi, region.eps0)


def learn_sontag_clf(sys, cost, region, cfg, weights, n_random=8, max_rounds=50, seed=0):
    """Quadratic CLF for the Sontag baseline on ``region``.

    Learned like the main candidate from demonstrations (axis seeds plus
    ``n_random`` random starts), positivity counterexamples, and extra
    demonstrations from states where the CLF condition fails.
    """
    from .synthesis import seed_points

    basis = PolynomialBasis(sys.state_dim, 2, even_only=True, names=sys.state_names)
    store = InequalityStore(len(basis), cfg.delta_margin)
    rng = _seeded_rng(seed, 0)
    starts = seed_points(region) + [region.sample(rng) for _ in range(n_random)]
    run = lambda x0: demonstrate(sys, cost, region, x0, cfg.demonstrator, cfg.h, cfg.horizon_steps, weights)
    demos = 0
    for x0 in starts:
        try:
            add_compatibility_constraints(store, basis, run(x0), demos)
            demos += 1
        except (DemonstrationFailed, IntegrationDiverged):
            log.warning("baseline: no demonstration from %s", np.round(x0, 3).tolist())
    for k in range(max_rounds):
        cand = learn(store, basis, -cfg.p_bound, cfg.p_bound)
        x = falsify_positivity(cand, region, cfg.de, key=(seed, 2 * k))
        if x is not None:
            add_positivity_counterexample(store, basis, x)
            continue
        x = falsify_sontag_condition(sys, cand, region, cfg.de, key=(seed, 2 * k + 1))
        if x is None:
            log.info("baseline CLF after %d demonstrations: %s", demos, cand.to_text())
            return cand
        try:
            add_compatibility_constraints(store, basis, run(x), demos)
            demos += 1
        except (DemonstrationFailed, IntegrationDiverged):
            raise LearnerInfeasible(f"baseline: no demonstration from CLF-condition counterexample {x}")
    raise LearnerInfeasible(f"baseline CLF not found in {max_rounds} rounds")


@dataclass
class CostReport:
    low: list
    high: list
    seed: int
    samples: np.ndarray
    costs_a: np.ndarray
    costs_b: np.ndarray
    status_a: list
    status_b: list
    bins: dict = field(default_factory=dict)

    @staticmethod
    def _mean(c):
        c = c[np.isfinite(c)]
        return float(c.mean()) if len(c) else float("nan")

    @property
    def mean_a(self):
        return self._mean(self.costs_a)

    @property
    def mean_b(self):
        return self._mean(self.costs_b)

    @property
    def failures_a(self):
        return int(np.sum(~np.isfinite(self.costs_a)))

    @property
    def failures_b(self):
        return int(np.sum(~np.isfinite(self.costs_b)))

    @property
    def paired_means(self):
        """Means of both cost vectors over samples both controllers stabilize."""
        both = np.isfinite(self.costs_a) & np.isfinite(self.costs_b)
        if not both.any():
            return float("nan"), float("nan")
        return float(self.costs_a[both].mean()), float(self.costs_b[both].mean())

    def summary(self):
        nan_none = lambda v: None if not np.isfinite(v) else v
        pa, pb = self.paired_means
        return {"n_samples": int(len(self.samples)), "box": [self.low, self.high], "seed": self.seed,
                "mean_a": nan_none(self.mean_a), "mean_b": nan_none(self.mean_b),
                "paired_mean_a": nan_none(pa), "paired_mean_b": nan_none(pb),
                "failures_a": self.failures_a, "failures_b": self.failures_b, "bins": self.bins}

    def to_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.summary(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    def to_csv(self, path):
        n = len(self.low)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([f"x{i + 1}" for i in range(n)] + ["cost_a", "cost_b", "status_a", "status_b"])
            for x, ca, cb, sa, sb in zip(self.samples, self.costs_a, self.costs_b, self.status_a, self.status_b):
                w.writerow([repr(float(v)) for v in x] + [repr(float(ca)), repr(float(cb)), sa, sb])


def histogram(costs_a, costs_b, n_bins=50):
    pooled = np.concatenate([costs_a, costs_b])
    pooled = pooled[np.isfinite(pooled)]
    if not len(pooled):
        return {"edges": [], "counts_a": [], "counts_b": []}
    lo, hi = float(pooled.min()), float(pooled.max())
    if hi <= lo:
        hi = lo + 1.0
    edges = np.linspace(lo, hi, n_bins + 1)
    ca, _ = np.histogram(costs_a[np.isfinite(costs_a)], edges)
    cb, _ = np.histogram(costs_b[np.isfinite(costs_b)], edges)
    return {"edges": edges.tolist(), "counts_a": ca.tolist(), "counts_b": cb.tolist()}


def compare(controller_a, controller_b, sys, cost, region, box, n_samples, seed, h, step_cap=4000):
    """Paired closed-loop costs of two controllers on ``n_samples`` seeded
    uniform states of ``box``."""
    low, high = np.asarray(box[0], dtype=float), np.asarray(box[1], dtype=float)
    rng = np.random.default_rng(seed)
    X = rng.uniform(low, high, size=(n_samples, len(low)))
    ra = [closed_loop_cost(sys, cost, controller_a, x, h, region, step_cap) for x in X]
    rb = ra if controller_b is controller_a else [
        closed_loop_cost(sys, cost, controller_b, x, h, region, step_cap) for x in X]
    ca = np.array([r.cost for r in ra])
    cb = np.array([r.cost for r in rb])
    return CostReport(low.tolist(), high.tolist(), seed, X, ca, cb, [r.status for r in ra],
                      [r.status for r in rb], histogram(ca, cb))
