"""Demonstrations from an iterative-LQR trajectory optimizer.

The optimizer works on the RK4 map with zero-order-hold inputs. Its output is
then replayed through the interpolated LQR tracking law (which the switching
controller uses), and the replay is taken as the demonstration. A couple of
replay/relinearize rounds make the stored samples a fixed point of that
closed loop, so tracking a demonstration from its first state reproduces it.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .config import DemonstratorConfig
from .dynamics import IntegrationDiverged, closed_loop_step, integrate_step, step_jacobians_batch
from .lqr_tracking import NotStabilizable, TrackingCostMatrices, build_schedule, equilibrium_lqr


class DemonstrationFailed(RuntimeError):
    pass


@dataclass
class DiscreteDemonstration:
    h: float
    states: np.ndarray
    inputs: np.ndarray
    origin_index: Optional[tuple] = None

    def __post_init__(self):
        self.states = np.atleast_2d(np.asarray(self.states, dtype=float))
        self.inputs = np.asarray(self.inputs, dtype=float).reshape(len(self.states), -1)

    def __len__(self):
        return len(self.states)

    @property
    def duration(self):
        return (len(self) - 1) * self.h

    def suffix(self, k, parent_id=None):
        return DiscreteDemonstration(self.h, self.states[k:], self.inputs[k:], (parent_id, k))

    def cost(self, cost):
        """Trapezoidal quadratic cost along the samples."""
        X, U = self.states, self.inputs
        g = np.einsum("ij,jk,ik->i", X, cost.Q, X) + np.einsum("ij,jk,ik->i", U, cost.R, U)
        if len(g) < 2:
            return 0.0
        return float(self.h * (0.5 * g[0] + g[1:-1].sum() + 0.5 * g[-1]))

    def to_dict(self):
        return {"h": self.h, "states": self.states.tolist(), "inputs": self.inputs.tolist(),
                "origin_index": None if self.origin_index is None else list(self.origin_index)}

    @classmethod
    def from_dict(cls, d):
        oi = d.get("origin_index")
        return cls(float(d["h"]), np.array(d["states"], dtype=float), np.array(d["inputs"], dtype=float),
                   None if oi is None else tuple(oi))


class _Objective:
    """Penalized finite-horizon cost: quadratic running cost, S-box penalties
    on states and inputs, and a terminal weight on ``||x_N||^2``."""

    def __init__(self, cost, region, h, w_pen, w_term):
        self.Q, self.R = cost.Q, cost.R
        n = cost.Q.shape[0]
        self.xlo, self.xhi = region.S_low[:n], region.S_high[:n]
        self.ulo, self.uhi = region.S_low[n:], region.S_high[n:]
        self.h, self.w_pen, self.w_term = h, w_pen, w_term

    def total(self, X, U):
        h, wp = self.h, self.w_pen
        run = np.einsum("ij,jk,ik->", X[:-1], self.Q, X[:-1]) + np.einsum("ij,jk,ik->", U, self.R, U)
        pen = (np.sum(np.maximum(X - self.xhi, 0) ** 2) + np.sum(np.maximum(self.xlo - X, 0) ** 2)
               + np.sum(np.maximum(U - self.uhi, 0) ** 2) + np.sum(np.maximum(self.ulo - U, 0) ** 2))
        return float(h * run + h * wp * pen + self.w_term * X[-1] @ X[-1])

    def _box_terms(self, z, lo, hi):
        over = np.maximum(z - hi, 0) - np.maximum(lo - z, 0)
        active = (z > hi) | (z < lo)
        c = 2.0 * self.h * self.w_pen
        return c * over, c * active

    def stage(self, x, u):
        h = self.h
        gx, hx = self._box_terms(x, self.xlo, self.xhi)
        gu, hu = self._box_terms(u, self.ulo, self.uhi)
        lx = 2 * h * self.Q @ x + gx
        lu = 2 * h * self.R @ u + gu
        lxx = 2 * h * self.Q + np.diag(hx)
        luu = 2 * h * self.R + np.diag(hu)
        return lx, lu, lxx, luu

    def terminal(self, x):
        gx, hx = self._box_terms(x, self.xlo, self.xhi)
        return 2 * self.w_term * x + gx, 2 * self.w_term * np.eye(len(x)) + np.diag(hx)


def _rollout(sys, x0, U, h):
    X = np.empty((len(U) + 1, len(x0)))
    X[0] = x0
    for k, u in enumerate(U):
        X[k + 1] = integrate_step(sys, X[k], u, h)
    return X


def ilqr(sys, cost, region, x0, U0, h, cfg, w_pen, w_term, history=None):
    """Minimize the penalized objective from the control sequence ``U0``.

    Accepted iterates never increase the objective. Returns ``(X, U, J)``.
    """
    obj = _Objective(cost, region, h, w_pen, w_term)
    U = np.array(U0, dtype=float)
    N, m = U.shape
    n = len(x0)
    X = _rollout(sys, x0, U, h)
    J = obj.total(X, U)
    mu = cfg.regularization_init
    alphas = 0.5 ** np.arange(10)
    for _ in range(cfg.max_outer_iterations):
        _, fx, fu = step_jacobians_batch(sys, X[:-1], U, h)
        # backward pass, retried with larger damping when Quu is not PD
        while True:
            Vx, Vxx = obj.terminal(X[-1])
            kff = np.empty((N, m))
            Kfb = np.empty((N, m, n))
            dJ1 = dJ2 = 0.0
            ok = True
            for k in range(N - 1, -1, -1):
                lx, lu, lxx, luu = obj.stage(X[k], U[k])
                A, B = fx[k], fu[k]
                Qx = lx + A.T @ Vx
                Qu = lu + B.T @ Vx
                Qxx = lxx + A.T @ Vxx @ A
                Quu = luu + B.T @ Vxx @ B + mu * np.eye(m)
                Qux = B.T @ Vxx @ A
                try:
                    L = np.linalg.cholesky(Quu)
                except np.linalg.LinAlgError:
                    ok = False
                    break
                kk = -np.linalg.solve(Quu, Qu)
                KK = -np.linalg.solve(Quu, Qux)
                kff[k], Kfb[k] = kk, KK
                dJ1 += kk @ Qu
                dJ2 += 0.5 * kk @ Quu @ kk
                Vx = Qx + KK.T @ Quu @ kk + KK.T @ Qu + Qux.T @ kk
                Vxx = Qxx + KK.T @ Quu @ KK + KK.T @ Qux + Qux.T @ KK
                Vxx = 0.5 * (Vxx + Vxx.T)
            if ok:
                break
            mu = max(mu * 10, 1e-6)
            if mu > 1e10:
                return X, U, J
        accepted = False
        for a in alphas:
            Xn = np.empty_like(X)
            Un = np.empty_like(U)
            Xn[0] = x0
            try:
                for k in range(N):
                    Un[k] = U[k] + a * kff[k] + Kfb[k] @ (Xn[k] - X[k])
                    Xn[k + 1] = integrate_step(sys, Xn[k], Un[k], h)
            except IntegrationDiverged:
                continue
            Jn = obj.total(Xn, Un)
            expected = -(a * dJ1 + a * a * dJ2)
            if Jn < J and (expected <= 0 or (J - Jn) > 1e-4 * expected):
                accepted = True
                break
        if not accepted:
            mu = max(mu * 10, 1e-6)
            if mu > 1e10:
                break
            continue
        improvement = J - Jn
        X, U, J = Xn, Un, Jn
        if history is not None:
            history.append((J, a, mu))
        mu = max(mu / 10, 1e-12)
        if improvement < cfg.convergence_tol * max(1.0, abs(J)):
            break
    return X, U, J


def _replay(sys, sched, x0, length):
    h = sched.h
    X = np.empty((length, len(x0)))
    U = np.empty((length, sched.inputs.shape[1]))
    X[0] = x0
    for j in range(length - 1):
        X[j + 1], U[j] = closed_loop_step(sys, X[j], j * h, h, sched.control)
    U[-1] = sched.control(X[-1], (length - 1) * h)
    return X, U


def _first_in_ball(X, eps0):
    idx = np.flatnonzero(np.linalg.norm(X, axis=1) <= eps0)
    return int(idx[0]) if idx.size else None


def consistent_demonstration(sys, region, X, U, h, weights, tol=1e-9, max_rounds=8):
    """Replay ``(X, U)`` through its own interpolated tracking law until the
    samples are a fixed point, truncating at the first entry into ``H``."""
    demo = DiscreteDemonstration(h, X, U)
    prev_len = None
    for _ in range(max_rounds):
        sched = build_schedule(sys, demo, weights)
        Xr, Ur = _replay(sys, sched, demo.states[0], len(demo))
        k = _first_in_ball(Xr, region.eps0)
        if k is None:
            raise DemonstrationFailed("tracking replay does not reach the eps0-ball")
        gap = np.max(np.linalg.norm(Xr - demo.states, axis=1) / (1 + np.linalg.norm(demo.states, axis=1)))
        demo = DiscreteDemonstration(h, Xr[: k + 1], Ur[: k + 1])
        if gap < tol and prev_len == len(demo):
            break
        prev_len = len(demo)
    return demo


def replay_gap(sys, demo, weights):
    """Largest per-sample relative deviation between ``demo`` and its tracking replay."""
    sched = build_schedule(sys, demo, weights)
    Xr, _ = _replay(sys, sched, demo.states[0], len(demo))
    return float(np.max(np.linalg.norm(Xr - demo.states, axis=1) / (1 + np.linalg.norm(demo.states, axis=1))))


def lqr_warm_start(sys, cost, region, x0, h, horizon_steps):
    """Inputs of the equilibrium-LQR closed loop from ``x0``, clipped to the
    input box. Zeros if the linearization is not stabilizable."""
    n, m = sys.state_dim, sys.input_dim
    U = np.zeros((horizon_steps, m))
    try:
        lqr = equilibrium_lqr(sys, TrackingCostMatrices(cost.Q, cost.R), h)
    except NotStabilizable:
        return U
    ulo, uhi = region.S_low[n:], region.S_high[n:]
    x = np.array(x0, dtype=float)
    with np.errstate(all="ignore"):
        for k in range(horizon_steps):
            U[k] = np.clip(lqr(x), ulo, uhi)
            try:
                x = integrate_step(sys, x, U[k], h)
            except IntegrationDiverged:
                U[k:] = 0.0
                break
    return U


def _solve_from(sys, cost, region, x0, U, cfg, h, weights, history):
    m = sys.input_dim
    w_pen, w_term = cfg.constraint_penalty_weight, cfg.terminal_weight
    for _ in range(cfg.penalty_escalations + 1):
        X, U, _ = ilqr(sys, cost, region, x0, U, h, cfg, w_pen, w_term, history)
        if _first_in_ball(X, region.eps0) is not None:
            U_full = np.vstack([U, np.zeros((1, m))])
            try:
                demo = consistent_demonstration(sys, region, X, U_full, h, weights)
            except (DemonstrationFailed, IntegrationDiverged):
                demo = None
            if demo is not None and all(region.in_S(x, u) for x, u in zip(demo.states, demo.inputs)):
                return demo
        w_pen *= 10
        w_term *= 10
    return None


def demonstrate(sys, cost, region, x0, cfg, h, horizon_steps, weights, history=None):
    """Demonstration from ``x0``: iLQR warm-started from the equilibrium-LQR
    rollout, with the all-zero input sequence as a fallback start."""
    x0 = np.asarray(x0, dtype=float)
    if not region.in_D(x0):
        raise ValueError(f"initial state {x0} outside D")
    m = sys.input_dim
    if region.in_H(x0):
        return DiscreteDemonstration(h, x0[None, :], np.zeros((1, m)))
    for U0 in (lqr_warm_start(sys, cost, region, x0, h, horizon_steps), np.zeros((horizon_steps, m))):
        demo = _solve_from(sys, cost, region, x0, U0, cfg, h, weights, history)
        if demo is not None:
            return demo
    raise DemonstrationFailed(f"no feasible demonstration from {x0}")


def continuity_probe(sys, cost, region, x0, delta, cfg, h, horizon_steps, weights):
    """Largest input deviation between demonstrations from ``x0`` and from
    ``x0 + delta*e_i`` over all coordinates ``i``."""
    x0 = np.asarray(x0, dtype=float)
    if not region.in_D(x0):
        raise ValueError(f"initial state {x0} outside D")
    if delta == 0:
        return 0.0
    base = demonstrate(sys, cost, region, x0, cfg, h, horizon_steps, weights)
    worst = 0.0
    for i in range(len(x0)):
        xp = x0.copy()
        xp[i] += delta
        if not region.in_D(xp):
            raise ValueError(f"perturbed state {xp} outside D")
        other = demonstrate(sys, cost, region, xp, cfg, h, horizon_steps, weights)
        k = min(len(base), len(other))
        worst = max(worst, float(np.max(np.linalg.norm(base.inputs[:k] - other.inputs[:k], axis=1))))
    return worst
