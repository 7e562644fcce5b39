"""Assignment rule and the LQR switching controller.

A target is a pair ``(demo_id, start)``: the suffix of a stored
demonstration beginning at sample ``start``. Tracking a target runs the
demonstration's gain schedule with that offset. The controller re-assigns at
the first grid instant ``t >= t_min`` (local clock) where the state lies in
the interior of ``D`` and ``L`` decreased by at least the fraction ``gamma``
of the target's own decrease. Inside the ``eps0``-ball it hands off to the
equilibrium LQR for good.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .demonstrator import DiscreteDemonstration
from .dynamics import closed_loop_step
from .lqr_tracking import build_schedule


class EmptyDatabase(LookupError):
    pass


class NotCompatible(ValueError):
    pass


# segment outcomes
SWITCH = "Switch"
REACHED_H = "ReachedH"
DECREASE_VIOLATED = "DecreaseViolated"
LEFT_S = "LeftS"

# trace outcomes
STABILIZED = "Stabilized"
SWITCH_LIMIT = "SwitchLimit"


@dataclass(frozen=True)
class SwitchingPolicy:
    t_min: float
    gamma: float
    eps0: float
    h: float
    first_admissible_only: bool = True

    def __post_init__(self):
        if not 0 < self.gamma < 1:
            raise ValueError("gamma must lie in (0, 1)")
        if self.t_min <= 0:
            raise ValueError("t_min must be positive")

    @property
    def t_min_steps(self):
        return int(round(self.t_min / self.h))


@dataclass(frozen=True)
class AssignmentRule:
    prefilter_k: int = 100

    def __post_init__(self):
        if self.prefilter_k < 1:
            raise ValueError("prefilter_k must be >= 1")


class DemoDatabase:
    """Stored demonstrations, their gain schedules and the target index.

    With suffix expansion every suffix of at least two samples is a target.
    ``short_suffixes=False`` keeps only suffixes lasting ``t_min`` or more.
    Whole demonstrations are targets regardless of length.
    """

    def __init__(self, sys, weights, h, t_min_steps, suffix_expansion=True, short_suffixes=False):
        self.sys = sys
        self.weights = weights
        self.h = h
        self.t_min_steps = t_min_steps
        self.suffix_expansion = suffix_expansion
        self.short_suffixes = short_suffixes
        self.demos = []
        self.schedules = []
        self.entries = []
        self._starts = []
        self._tree = None

    def __len__(self):
        return len(self.demos)

    def add(self, demo):
        if abs(demo.h - self.h) > 1e-12:
            raise ValueError("demonstration step differs from the database step")
        demo_id = len(self.demos)
        self.demos.append(demo)
        self.schedules.append(build_schedule(self.sys, demo, self.weights))
        last = len(demo) - 1
        min_steps = 1 if self.short_suffixes else self.t_min_steps
        starts = [0]
        if self.suffix_expansion:
            starts += [k for k in range(1, last + 1) if last - k >= min_steps]
        for k in starts:
            self.entries.append((demo_id, k))
            self._starts.append(demo.states[k])
        self._tree = None
        return demo_id

    def target_states(self, target):
        demo_id, start = target
        return self.demos[demo_id].states[start:]

    def assign(self, x, rule=AssignmentRule()):
        """Among the ``prefilter_k`` targets whose first state is nearest to
        ``x``, the one with the least estimated tracking cost; ties go to the
        lowest ``(demo_id, start)``."""
        if not self.entries:
            raise EmptyDatabase("no demonstrations to track")
        if self._tree is None:
            self._tree = cKDTree(np.array(self._starts))
        k = min(rule.prefilter_k, len(self.entries))
        _, idx = self._tree.query(x, k=k)
        best = None
        for i in np.atleast_1d(idx):
            demo_id, start = self.entries[i]
            c = self.schedules[demo_id].estimated_cost(x, offset=start)
            key = (c, demo_id, start)
            if best is None or key < best:
                best = key
        return best[1], best[2]

    def to_dict(self):
        return {"format": "clf-forge-demos", "version": 1, "h": self.h,
                "demonstrations": [d.to_dict() for d in self.demos]}

    @classmethod
    def from_dict(cls, d, sys, weights, t_min_steps, suffix_expansion=True, short_suffixes=False):
        if d.get("format") != "clf-forge-demos":
            raise ValueError("not a demonstration library")
        db = cls(sys, weights, float(d["h"]), t_min_steps, suffix_expansion, short_suffixes)
        for item in d["demonstrations"]:
            db.add(DiscreteDemonstration.from_dict(item))
        return db


@dataclass
class Segment:
    """One tracking phase. ``states`` holds samples ``0..end`` and ``inputs``
    the inputs applied at samples ``0..end-1``. ``u_end`` is the tracking
    input at the last sample when the phase ends the rollout."""

    target: tuple
    status: str
    states: np.ndarray
    inputs: np.ndarray
    u_end: np.ndarray = None
    L_start: float = float("nan")
    L_end: float = float("nan")
    target_L_start: float = float("nan")
    target_L_end: float = float("nan")

    @property
    def steps(self):
        return len(self.states) - 1


@dataclass
class SwitchingTrace:
    h: float
    t: np.ndarray
    states: np.ndarray
    inputs: np.ndarray
    demo_ids: np.ndarray
    starts: np.ndarray
    events: list
    status: str
    segments: list = field(default_factory=list)

    @property
    def switch_count(self):
        return sum(s.status == SWITCH for s in self.segments)

    def to_csv(self, path, targets=None):
        """Write one row per sample. ``targets`` (a :class:`DemoDatabase`)
        adds the reference state of the active target."""
        n = self.states.shape[1]
        m = self.inputs.shape[1]
        header = ["t"] + [f"x{i + 1}" for i in range(n)] + [f"u{i + 1}" for i in range(m)] + ["demo_id", "event"]
        if targets is not None:
            header += ["target_index"] + [f"target_x{i + 1}" for i in range(n)]
        ref = self._reference(targets) if targets is not None else None
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for k in range(len(self.t)):
                row = [repr(float(self.t[k]))] + [repr(float(v)) for v in self.states[k]]
                row += [repr(float(v)) for v in self.inputs[k]] + [int(self.demo_ids[k]), self.events[k]]
                if ref is not None:
                    row += [int(self.starts[k])] + [repr(float(v)) for v in ref[k]]
                w.writerow(row)

    def _reference(self, db):
        ref = np.full(self.states.shape, np.nan)
        for k, (demo_id, idx) in enumerate(zip(self.demo_ids, self.starts)):
            if demo_id >= 0:
                X = db.demos[demo_id].states
                ref[k] = X[min(idx, len(X) - 1)]
        return ref


class SwitchingController:
    def __init__(self, sys, db, candidate, policy, region, eq_lqr, rule=AssignmentRule()):
        self.sys = sys
        self.db = db
        self.candidate = candidate
        self.policy = policy
        self.region = region
        self.eq_lqr = eq_lqr
        self.rule = rule

    def segment(self, x0, strict=False):
        """Track the target assigned to ``x0`` until the first admissible
        switching instant (or the target's end, the ``eps0``-ball, or an
        exit from ``S``). ``strict`` tests ``<`` instead of ``<=``."""
        sys, pol, region, L = self.sys, self.policy, self.region, self.candidate
        h = pol.h
        target = self.db.assign(x0, self.rule)
        demo_id, start = target
        sched = self.db.schedules[demo_id]
        X_ref = sched.states[start:]
        T = len(X_ref) - 1
        L0, Lt0 = float(L(x0)), float(L(X_ref[0]))
        control = lambda x, t: sched.control(x, t, offset=start)
        xs, us = [np.asarray(x0, dtype=float)], []
        status = None
        k = 0
        while True:
            x = xs[-1]
            if k > 0 and np.linalg.norm(x) <= pol.eps0:
                status = REACHED_H
                break
            if k >= pol.t_min_steps and region.in_int_D(x):
                lhs = float(L(x)) - L0
                rhs = pol.gamma * (float(L(X_ref[k])) - Lt0)
                if (lhs < rhs) if strict else (lhs <= rhs):
                    status = SWITCH
                    break
                if pol.first_admissible_only:
                    status = DECREASE_VIOLATED
                    break
            if k == T:
                status = DECREASE_VIOLATED
                break
            x_next, u = closed_loop_step(sys, x, k * h, h, control)
            if not region.in_S(x, u):
                status = LEFT_S
                u_end = u
                break
            us.append(u)
            xs.append(x_next)
            k += 1
        if status == DECREASE_VIOLATED:
            u_end = control(xs[-1], k * h)
        elif status != LEFT_S:
            u_end = None
        seg = Segment(target, status, np.array(xs), np.array(us).reshape(-1, sys.input_dim), u_end)
        if status == SWITCH:
            seg.L_start, seg.L_end = L0, float(L(xs[-1]))
            seg.target_L_start, seg.target_L_end = Lt0, float(L(X_ref[k]))
        return seg

    def handoff(self, x0, step_cap):
        """Equilibrium LQR from ``x0`` until ``||x|| <= eps0/10``; returns
        ``(states, inputs, left_S)`` with one input per state."""
        h = self.policy.h
        xs, us = [np.asarray(x0, dtype=float)], []
        for _ in range(step_cap):
            x = xs[-1]
            if np.linalg.norm(x) <= self.policy.eps0 / 10:
                break
            x_next, u = closed_loop_step(self.sys, x, 0.0, h, self.eq_lqr)
            us.append(u)
            if not self.region.in_S(x, u):
                return np.array(xs), np.array(us), True
            xs.append(x_next)
        us.append(self.eq_lqr(xs[-1]))
        return np.array(xs), np.array(us).reshape(len(xs), -1), False

    def run(self, x0, max_switches=1000, handoff_steps=2000):
        """Closed-loop rollout from ``x0``; see :class:`SwitchingTrace`."""
        x0 = np.asarray(x0, dtype=float)
        if not self.region.in_D(x0):
            raise ValueError(f"initial state {x0} outside D")
        m = self.sys.input_dim
        states, inputs, ids, starts, events, segments = [], [], [], [], [], []
        x = x0
        status = None
        while status is None:
            if np.linalg.norm(x) <= self.policy.eps0:
                xs, us, left = self.handoff(x, handoff_steps)
                states += list(xs)
                inputs += list(us)
                ids += [-1] * len(xs)
                starts += [-1] * len(xs)
                events += ["handoff"] + ["none"] * (len(xs) - 1)
                status = LEFT_S if left else STABILIZED
                break
            if len(segments) > max_switches:
                status = SWITCH_LIMIT
                break
            seg = self.segment(x)
            segments.append(seg)
            k = seg.steps
            states += list(seg.states[:k])
            inputs += list(seg.inputs[:k])
            ids += [seg.target[0]] * k
            starts += [seg.target[1] + j for j in range(k)]
            events += ["switch"] + ["none"] * (k - 1)
            x = seg.states[-1]
            if seg.status in (LEFT_S, DECREASE_VIOLATED):
                states.append(x)
                inputs.append(seg.u_end)
                ids.append(seg.target[0])
                starts.append(seg.target[1] + k)
                events.append("switch" if k == 0 else "none")
                status = seg.status
        states = np.array(states).reshape(-1, len(x0))
        inputs = np.array(inputs).reshape(-1, m)
        return SwitchingTrace(self.policy.h, self.policy.h * np.arange(len(states)), states, inputs,
                              np.array(ids), np.array(starts), events, status, segments)

    def __call__(self, x0, **kw):
        return self.run(x0, **kw)


def decrease_holds(seg, gamma, strict=False):
    """Re-check the sufficient-decrease inequality recorded on a switch."""
    lhs = seg.L_end - seg.L_start
    rhs = gamma * (seg.target_L_end - seg.target_L_start)
    return lhs < rhs if strict else lhs <= rhs


def switch_count_bound(candidate, db, policy, region, grid=21):
    """Upper bound on switches before reaching the ``eps0``-ball:
    ``ceil(max_D L / (gamma |C|))`` with ``C`` the largest decrease of ``L``
    over ``t_min`` among the stored targets."""
    k = policy.t_min_steps
    drops = []
    for demo_id, start in db.entries:
        X = db.target_states((demo_id, start))
        if len(X) > k:
            drops.append(float(candidate(X[k]) - candidate(X[0])))
    if not drops:
        raise NotCompatible("no target lasts t_min")
    C = max(drops)
    if C >= 0:
        raise NotCompatible(f"L does not decrease over t_min on some target (C = {C:.3g})")
    axes = [np.linspace(lo, hi, grid) for lo, hi in zip(region.D_low, region.D_high)]
    pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, region.n)
    Lmax = float(np.max(candidate(pts)))
    return max(0, math.ceil(Lmax / (policy.gamma * abs(C))))
