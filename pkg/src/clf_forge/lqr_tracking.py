"""Discrete finite-horizon LQR tracking along a demonstration.

Sample ``j`` (0-based here) of a demonstration sits at time ``j*h``. The
tracking law interpolates linearly between the two affine feedback laws at
the ends of each sampling interval, so it is continuous in ``(x, t)``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.linalg


class RiccatiSingular(np.linalg.LinAlgError):
    pass


class NotStabilizable(RuntimeError):
    pass


class TimeOutOfRange(ValueError):
    pass


@dataclass(frozen=True)
class TrackingCostMatrices:
    """``Q``, ``R`` and an optional terminal weight (default ``Q``)."""

    Q: np.ndarray
    R: np.ndarray
    terminal: Optional[np.ndarray] = None

    def __post_init__(self):
        for M in (self.Q, self.R) + (() if self.terminal is None else (self.terminal,)):
            if not np.allclose(M, M.T) or np.linalg.eigvalsh(M).min() <= 0:
                raise ValueError("tracking weights must be symmetric positive definite")

    @property
    def S_terminal(self):
        return self.Q if self.terminal is None else self.terminal


def discretize(sys, x, u, h):
    """Euler linearization ``A = I + h dF/dx``, ``B = h dF/du``."""
    A = np.eye(sys.state_dim) + h * sys.jac_x(x, u)
    B = h * sys.jac_u(x, u)
    return A, B


def _riccati_step(S_next, A, B, Q, R):
    M = R + B.T @ S_next @ B
    if np.linalg.cond(M) > 1e12:
        raise RiccatiSingular(f"R + B'SB has condition number {np.linalg.cond(M):.3g}")
    SB = S_next @ B
    K = np.linalg.solve(M, SB.T @ A)
    S = Q + A.T @ (S_next @ A - SB @ K)
    return 0.5 * (S + S.T), K


class GainSchedule:
    """Riccati matrices ``S[j]`` and gains ``K[j]`` along one demonstration.

    ``S[-1]`` is the terminal weight. The last gain, which only enters the
    final interpolation interval, is the one-step gain against that weight.
    """

    def __init__(self, h, states, inputs, S, K):
        self.h = h
        self.states = states
        self.inputs = inputs
        self.S = S
        self.K = K
        self.length = len(states)

    @property
    def duration(self):
        return (self.length - 1) * self.h

    def control(self, x, t, offset=0):
        """Interpolated tracking input at local time ``t`` for the suffix
        starting at sample ``offset``."""
        h = self.h
        T = self.length - 1 - offset
        tol = 1e-9 * h
        if t < -tol or t > T * h + tol:
            raise TimeOutOfRange(f"t={t} outside [0, {T * h}]")
        if T == 0:
            return self.inputs[offset] - self.K[offset] @ (x - self.states[offset])
        j = min(int(t / h + 1e-9), T - 1)
        s = min(max(t / h - j, 0.0), 1.0)
        j += offset
        a = self.inputs[j] - self.K[j] @ (x - self.states[j])
        b = self.inputs[j + 1] - self.K[j + 1] @ (x - self.states[j + 1])
        return (1.0 - s) * a + s * b

    def estimated_cost(self, x, offset=0):
        d = x - self.states[offset]
        return float(d @ self.S[offset] @ d)


def build_schedule(sys, demo, w):
    """Backward Riccati recursion along ``demo`` for tracking weights ``w``,
    starting from ``S[-1] = w.S_terminal``."""
    X, U, h = demo.states, demo.inputs, demo.h
    T = len(X)
    n, m = sys.state_dim, sys.input_dim
    S_T = w.S_terminal
    S = np.empty((T, n, n))
    K = np.empty((T, m, n))
    S[-1] = S_T
    A_T, B_T = discretize(sys, X[-1], U[-1], h)
    _, K[-1] = _riccati_step(S_T, A_T, B_T, w.Q, w.R)
    for j in range(T - 2, -1, -1):
        A, B = discretize(sys, X[j], U[j], h)
        S[j], K[j] = _riccati_step(S[j + 1], A, B, w.Q, w.R)
    return GainSchedule(h, np.asarray(X), np.asarray(U), S, K)


def tracking_control(sched, x, t):
    return sched.control(np.asarray(x, dtype=float), t)


def estimated_tracking_cost(sched, x):
    return sched.estimated_cost(np.asarray(x, dtype=float))


class EquilibriumLQR:
    """Static feedback ``u = -K x`` from the converged discrete Riccati
    recursion of the Euler-discretized linearization at the origin."""

    def __init__(self, A, B, K, S, iterations):
        self.A, self.B, self.K, self.S = A, B, K, S
        self.iterations = iterations

    def __call__(self, x, t=0.0):
        return -self.K @ x

    @property
    def closed_loop(self):
        return self.A - self.B @ self.K

    def value_matrix(self, Q, R, h):
        """``P`` with ``x'Px`` the cost ``sum h (x'Qx + u'Ru)`` of the closed loop."""
        Acl = self.closed_loop
        P = scipy.linalg.solve_discrete_lyapunov(Acl.T, h * (Q + self.K.T @ R @ self.K))
        return 0.5 * (P + P.T)


def equilibrium_lqr(sys, w, h, tol=1e-10, max_iter=100_000):
    n, m = sys.state_dim, sys.input_dim
    A, B = discretize(sys, np.zeros(n), np.zeros(m), h)
    S = w.Q.copy()
    for it in range(1, max_iter + 1):
        S_new, K = _riccati_step(S, A, B, w.Q, w.R)
        if not np.all(np.isfinite(S_new)):
            raise NotStabilizable("Riccati recursion diverged")
        delta = np.max(np.abs(S_new - S))
        S = S_new
        if delta < tol * max(1.0, np.max(np.abs(S))):
            break
    else:
        raise NotStabilizable(f"Riccati recursion did not converge in {max_iter} iterations")
    K = np.linalg.solve(w.R + B.T @ S @ B, B.T @ S @ A)
    rho = np.max(np.abs(np.linalg.eigvals(A - B @ K)))
    if rho >= 1:
        raise NotStabilizable(f"closed-loop spectral radius {rho:.6f} >= 1")
    return EquilibriumLQR(A, B, K, S, it)
