"""Control systems, quadratic costs, regions and fixed-step simulation.

Systems are written in deviation coordinates: ``f(x, u)`` evaluates the raw
model at ``u + u_eq`` so that the origin is an equilibrium with zero input.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import sympy as sp


class IntegrationDiverged(RuntimeError):
    pass


class ControlSystem:
    """Smooth control system ``xdot = F(x, u)`` with analytic Jacobians.

    Built from sympy expressions; the numeric callables are generated once
    with ``lambdify``. ``u_eq`` is the trim input, and every public method
    takes the input in deviation coordinates.
    """

    def __init__(self, name, states, inputs, rhs, u_eq=None, affine=True):
        self.name = name
        self.state_dim = len(states)
        self.input_dim = len(inputs)
        self.u_eq = np.zeros(self.input_dim) if u_eq is None else np.asarray(u_eq, dtype=float)
        self._symbols = (tuple(states), tuple(inputs))

        # substitute u -> u + u_eq so the origin is an equilibrium
        dev = sp.symbols(f"v0:{self.input_dim}", real=True)
        shift = {u: d + float(e) for u, d, e in zip(inputs, dev, self.u_eq)}
        rhs = sp.Matrix(rhs).subs(shift)
        args = list(states) + list(dev)
        X, U = sp.Matrix(states), sp.Matrix(dev)
        self.rhs = rhs
        self._f = sp.lambdify(args, list(rhs), modules="math", cse=True)
        self._A = sp.lambdify(args, rhs.jacobian(X).tolist(), modules="math", cse=True)
        self._B = sp.lambdify(args, rhs.jacobian(U).tolist(), modules="math", cse=True)
        # numpy versions for evaluating a whole trajectory at once
        self._f_np = sp.lambdify(args, list(rhs), modules="numpy", cse=True)
        self._A_np = sp.lambdify(args, list(rhs.jacobian(X)), modules="numpy", cse=True)
        self._B_np = sp.lambdify(args, list(rhs.jacobian(U)), modules="numpy", cse=True)

        self._drift = self._gain = None
        if affine:
            G = rhs.jacobian(U)
            if all(sp.diff(G, d) == sp.zeros(*G.shape) for d in dev):
                F0 = rhs.subs({d: 0 for d in dev})
                self._drift = sp.lambdify(list(states), list(F0), modules="math", cse=True)
                self._gain = sp.lambdify(list(states), G.tolist(), modules="math", cse=True)

    @property
    def state_names(self):
        return [str(v) for v in self._symbols[0]]

    def __repr__(self):
        return f"ControlSystem({self.name!r}, n={self.state_dim}, m={self.input_dim})"

    def f(self, x, u):
        try:
            return np.array(self._f(*x, *u))
        except (ValueError, OverflowError) as exc:  # math.sin(inf) and friends
            raise IntegrationDiverged(f"{self.name}: {exc} at x={x}") from None

    def jac_x(self, x, u):
        return np.array(self._A(*x, *u), dtype=float)

    def jac_u(self, x, u):
        return np.array(self._B(*x, *u), dtype=float).reshape(self.state_dim, self.input_dim)

    def _batched(self, fn, X, U, shape):
        X = np.asarray(X, dtype=float)
        U = np.asarray(U, dtype=float)
        N = X.shape[0]
        with np.errstate(all="ignore"):
            cols = fn(*X.T, *U.T)
        out = np.empty((N, len(cols)))
        for i, c in enumerate(cols):
            out[:, i] = c  # constant entries broadcast
        return out.reshape((N,) + shape)

    def f_batch(self, X, U):
        """``f`` at each row of ``X`` (N, n) and ``U`` (N, m)."""
        return self._batched(self._f_np, X, U, (self.state_dim,))

    def jac_x_batch(self, X, U):
        return self._batched(self._A_np, X, U, (self.state_dim, self.state_dim))

    def jac_u_batch(self, X, U):
        return self._batched(self._B_np, X, U, (self.state_dim, self.input_dim))

    @property
    def is_control_affine(self):
        return self._drift is not None

    def affine_split(self, x):
        """Return ``(F(x), G(x))`` with ``f(x, u) = F(x) + G(x) u``."""
        if self._drift is None:
            raise ValueError(f"{self.name} has no control-affine form")
        F = np.array(self._drift(*x), dtype=float)
        G = np.array(self._gain(*x), dtype=float).reshape(self.state_dim, self.input_dim)
        return F, G


@dataclass
class CostSpec:
    Q: np.ndarray
    R: np.ndarray

    def __post_init__(self):
        self.Q = np.atleast_2d(np.asarray(self.Q, dtype=float))
        self.R = np.atleast_2d(np.asarray(self.R, dtype=float))
        for M in (self.Q, self.R):
            if not np.allclose(M, M.T) or np.linalg.eigvalsh(M).min() <= 0:
                raise ValueError("cost matrices must be symmetric positive definite")


@dataclass
class Region:
    """Region of interest ``D``, safety box ``S`` over (x, u) and the radius
    of the equilibrium ball ``H``."""

    D_low: np.ndarray
    D_high: np.ndarray
    S_low: np.ndarray
    S_high: np.ndarray
    eps0: float

    def __post_init__(self):
        for name in ("D_low", "D_high", "S_low", "S_high"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=float))
        n = self.D_low.size
        if np.any(self.D_low >= self.D_high) or self.eps0 <= 0:
            raise ValueError("degenerate region")
        if np.any(self.S_low[:n] > self.D_low) or np.any(self.S_high[:n] < self.D_high):
            raise ValueError("D must lie inside the state projection of S")
        if np.any(self.D_low > -self.eps0) or np.any(self.D_high < self.eps0):
            raise ValueError("eps0-ball must lie in the interior of D")

    @property
    def n(self):
        return self.D_low.size

    def in_D(self, x):
        return bool(np.all(x >= self.D_low) and np.all(x <= self.D_high))

    def in_int_D(self, x):
        return bool(np.all(x > self.D_low) and np.all(x < self.D_high))

    def in_S(self, x, u):
        z = np.concatenate([x, u])
        return bool(np.all(z >= self.S_low) and np.all(z <= self.S_high))

    def in_H(self, x):
        return float(np.linalg.norm(x)) <= self.eps0

    def sample(self, rng, low=None, high=None):
        """Uniform sample of a box (default ``D``) minus the ball ``H`` by rejection."""
        low = self.D_low if low is None else low
        high = self.D_high if high is None else high
        while True:
            x = rng.uniform(low, high)
            if not self.in_H(x):
                return x


def integrate_step(sys, x, u, h):
    """One classical RK4 step with the input held constant over ``[0, h]``."""
    k1 = sys.f(x, u)
    k2 = sys.f(x + 0.5 * h * k1, u)
    k3 = sys.f(x + 0.5 * h * k2, u)
    k4 = sys.f(x + h * k3, u)
    x_next = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    if not np.all(np.isfinite(x_next)):
        raise IntegrationDiverged(f"non-finite state after step from {x}")
    return x_next


def step_jacobians(sys, x, u, h):
    """Exact Jacobians of the RK4 map ``integrate_step`` w.r.t. ``x`` and ``u``."""
    n = sys.state_dim
    I = np.eye(n)
    xs = x
    k1 = sys.f(xs, u)
    A1, B1 = sys.jac_x(xs, u), sys.jac_u(xs, u)
    dk1x, dk1u = A1, B1
    x2 = x + 0.5 * h * k1
    k2 = sys.f(x2, u)
    A2, B2 = sys.jac_x(x2, u), sys.jac_u(x2, u)
    dk2x = A2 @ (I + 0.5 * h * dk1x)
    dk2u = A2 @ (0.5 * h * dk1u) + B2
    x3 = x + 0.5 * h * k2
    k3 = sys.f(x3, u)
    A3, B3 = sys.jac_x(x3, u), sys.jac_u(x3, u)
    dk3x = A3 @ (I + 0.5 * h * dk2x)
    dk3u = A3 @ (0.5 * h * dk2u) + B3
    x4 = x + h * k3
    k4 = sys.f(x4, u)
    A4, B4 = sys.jac_x(x4, u), sys.jac_u(x4, u)
    dk4x = A4 @ (I + h * dk3x)
    dk4u = A4 @ (h * dk3u) + B4
    x_next = x + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
    Fx = I + (h / 6.0) * (dk1x + 2 * dk2x + 2 * dk3x + dk4x)
    Fu = (h / 6.0) * (dk1u + 2 * dk2u + 2 * dk3u + dk4u)
    return x_next, Fx, Fu


def step_jacobians_batch(sys, X, U, h):
    """``step_jacobians`` for N state/input pairs at once; returns arrays
    of shape (N, n), (N, n, n) and (N, n, m)."""
    X = np.asarray(X, dtype=float)
    U = np.asarray(U, dtype=float)
    n = sys.state_dim
    I = np.eye(n)
    mm = lambda a, b: np.einsum("kij,kjl->kil", a, b)
    ks, dx, du = [], [], []
    prev = None
    for c, xs in ((0.0, X), (0.5, None), (0.5, None), (1.0, None)):
        if prev is not None:
            xs = X + c * h * prev[0]
        k = sys.f_batch(xs, U)
        A, B = sys.jac_x_batch(xs, U), sys.jac_u_batch(xs, U)
        if prev is None:
            kx, ku = A, B
        else:
            kx = mm(A, I + c * h * prev[1])
            ku = mm(A, c * h * prev[2]) + B
        prev = (k, kx, ku)
        ks.append(k)
        dx.append(kx)
        du.append(ku)
    w = h / 6.0
    X_next = X + w * (ks[0] + 2 * ks[1] + 2 * ks[2] + ks[3])
    Fx = I + w * (dx[0] + 2 * dx[1] + 2 * dx[2] + dx[3])
    Fu = w * (du[0] + 2 * du[1] + 2 * du[2] + du[3])
    return X_next, Fx, Fu


def closed_loop_step(sys, x, t, h, controller):
    """RK4 step of ``xdot = F(x, controller(x, t))`` with the feedback
    re-evaluated at every stage. Returns the next state and the input at ``(x, t)``."""
    u1 = controller(x, t)
    k1 = sys.f(x, u1)
    x2 = x + 0.5 * h * k1
    k2 = sys.f(x2, controller(x2, t + 0.5 * h))
    x3 = x + 0.5 * h * k2
    k3 = sys.f(x3, controller(x3, t + 0.5 * h))
    x4 = x + h * k3
    k4 = sys.f(x4, controller(x4, t + h))
    x_next = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    if not np.all(np.isfinite(x_next)):
        raise IntegrationDiverged(f"non-finite state after step from {x}")
    return x_next, u1


REACHED_H0 = "ReachedH0"
LEFT_S = "LeftS"
COMPLETED = "Completed"


@dataclass
class Trajectory:
    t: np.ndarray
    states: np.ndarray
    inputs: np.ndarray
    status: str


def simulate(sys, x0, controller, h, n_steps, region, stop_radius=None):
    """Closed-loop simulation sampled at ``t = 0, h, ..., n_steps*h``.

    Stops at the first sample with ``||x|| <= stop_radius`` (default ``eps0``)
    or with ``(x, u)`` outside ``S``.
    """
    stop_radius = region.eps0 if stop_radius is None else stop_radius
    x = np.array(x0, dtype=float)
    xs, us = [x], []
    status = COMPLETED
    for k in range(n_steps + 1):
        t = k * h
        if np.linalg.norm(x) <= stop_radius:
            status = REACHED_H0
            us.append(np.asarray(controller(x, t), dtype=float))
            break
        if k == n_steps:
            us.append(np.asarray(controller(x, t), dtype=float))
            break
        x_next, u = closed_loop_step(sys, x, t, h, controller)
        us.append(np.asarray(u, dtype=float))
        if not region.in_S(x, u):
            status = LEFT_S
            break
        x = x_next
        xs.append(x)
    xs = np.array(xs[: len(us)])
    if status == COMPLETED and not region.in_S(xs[-1], us[-1]):
        status = LEFT_S
    return Trajectory(h * np.arange(len(xs)), xs, np.array(us), status)


def running_cost(cost, x, u):
    x = np.atleast_1d(x)
    u = np.atleast_1d(u)
    return float(x @ cost.Q @ x + u @ cost.R @ u)
