"""Linearly parametrized polynomial CLF candidates and the LP learner.

A candidate is ``L_p(x) = sum_k p_k phi_k(x)`` over monomials ``phi_k`` with
no constant term. Compatibility with demonstrations and positivity
counterexamples become half-spaces ``a . p >= delta`` with ``||a|| = 1``; the
learner returns the Chebyshev center of their intersection with the box
``P = [p_min, p_max]^d``.
"""
from __future__ import annotations

import itertools
import json
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog

log = logging.getLogger(__name__)

POSITIVITY = "positivity"
DECREASE = "decrease"
R_TOL = 1e-8


class LearnerInfeasible(RuntimeError):
    """The feasible parameter set is empty (up to ``R_TOL``)."""


class LPSolverFailure(RuntimeError):
    pass


class PolynomialBasis:
    """Monomials ``prod_i x_i^e_i`` with ``1 <= sum(e) <= degree``.

    ``even_only`` keeps monomials of even total degree; ``include_linear=False``
    drops degree-1 terms. Ordering is colexicographic in the exponents, which
    lists ``theta, theta^2, ..., theta_dot, theta*theta_dot, ...`` for two states.
    """

    def __init__(self, n, degree=2, even_only=True, include_linear=True, exponents=None, names=None):
        self.n = n
        if exponents is None:
            exps = [e for e in itertools.product(range(degree + 1), repeat=n) if 1 <= sum(e) <= degree]
            if even_only:
                exps = [e for e in exps if sum(e) % 2 == 0]
            if not include_linear:
                exps = [e for e in exps if sum(e) != 1]
            exps.sort(key=lambda e: e[::-1])
        else:
            exps = [tuple(int(v) for v in e) for e in exponents]
            if any(len(e) != n or min(e) < 0 for e in exps):
                raise ValueError("exponents must be nonnegative n-vectors")
            if any(sum(e) == 0 for e in exps):
                raise ValueError("constant monomial not allowed")
            if len(set(exps)) != len(exps):
                raise ValueError("duplicate monomials")
        if not exps:
            raise ValueError("empty basis")
        self.exponents = np.array(exps, dtype=int)
        self.degree = int(self.exponents.sum(axis=1).max())
        self.even_only = bool(np.all(self.exponents.sum(axis=1) % 2 == 0))
        self.names = list(names) if names is not None else [f"x{i + 1}" for i in range(n)]

    def __len__(self):
        return len(self.exponents)

    def __eq__(self, other):
        return isinstance(other, PolynomialBasis) and np.array_equal(self.exponents, other.exponents)

    def features(self, X):
        """Monomial values, shape ``(d,)`` for one state or ``(N, d)`` for rows of ``X``."""
        X = np.asarray(X, dtype=float)
        single = X.ndim == 1
        X = np.atleast_2d(X)
        out = np.ones((X.shape[0], len(self)))
        for i in range(self.n):
            e = self.exponents[:, i]
            if e.any():
                out *= X[:, i : i + 1] ** e
        return out[0] if single else out

    def jacobian(self, x):
        """``d phi / d x`` as a ``(d, n)`` matrix."""
        x = np.asarray(x, dtype=float)
        J = np.zeros((len(self), self.n))
        for i in range(self.n):
            e = self.exponents.copy()
            c = e[:, i].astype(float)
            e[:, i] = np.maximum(e[:, i] - 1, 0)
            J[:, i] = c * np.prod(x ** e, axis=1)
        return J

    def monomial_str(self, k, power="^"):
        parts = []
        for name, e in zip(self.names, self.exponents[k]):
            if e == 1:
                parts.append(name)
            elif e > 1:
                parts.append(f"{name}{power}{e}")
        return "*".join(parts)

    def to_dict(self):
        return {"n": self.n, "names": self.names, "exponents": self.exponents.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(int(d["n"]), exponents=d["exponents"], names=d.get("names"))


@dataclass
class CandidateCLF:
    basis: PolynomialBasis
    p: np.ndarray
    p_min: float = -10.0
    p_max: float = 10.0
    radius: float = float("nan")

    def __post_init__(self):
        self.p = np.asarray(self.p, dtype=float)
        if self.p.shape != (len(self.basis),):
            raise ValueError("parameter vector does not match the basis")
        if np.any(self.p < self.p_min - 1e-9) or np.any(self.p > self.p_max + 1e-9):
            raise ValueError("parameters outside P")

    def __call__(self, x):
        return self.basis.features(x) @ self.p

    def gradient(self, x):
        return self.p @ self.basis.jacobian(x)

    def to_text(self, digits=3):
        terms = []
        for k, c in enumerate(self.p):
            mono = self.basis.monomial_str(k)
            sign = "-" if c < 0 else "+"
            terms.append(f"{sign} {abs(c):.{digits}f}*{mono}")
        body = " ".join(terms)
        return "L = " + (body[2:] if body.startswith("+ ") else "-" + body[2:])

    def to_dict(self):
        return {"basis": self.basis.to_dict(), "coefficients": self.p.tolist(),
                "bounds": [self.p_min, self.p_max], "radius": self.radius,
                "text": self.to_text()}

    @classmethod
    def from_dict(cls, d):
        lo, hi = d.get("bounds", (-np.inf, np.inf))
        return cls(PolynomialBasis.from_dict(d["basis"]), np.array(d["coefficients"], dtype=float),
                   float(lo), float(hi), float(d.get("radius", float("nan"))))

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


@dataclass
class InequalityStore:
    """Normalized half-spaces ``a . p >= delta`` with provenance tags."""

    d: int
    delta: float = 1e-6
    rows: list = field(default_factory=list)
    tags: list = field(default_factory=list)
    sources: list = field(default_factory=list)
    _seen: set = field(default_factory=set, repr=False)

    def __len__(self):
        return len(self.rows)

    @property
    def A(self):
        return np.array(self.rows).reshape(-1, self.d)

    def add(self, a, tag, source=None):
        """Normalize and store ``a . p >= delta``; returns False for zero or duplicate rows."""
        a = np.asarray(a, dtype=float)
        norm = np.linalg.norm(a)
        if norm < 1e-300:
            log.debug("skipping zero row from %s", source)
            return False
        a = a / norm
        key = np.round(a, 12).tobytes()
        if key in self._seen:
            return False
        self._seen.add(key)
        self.rows.append(a)
        self.tags.append(tag)
        self.sources.append(source)
        return True

    def slack(self, p):
        if not self.rows:
            return np.empty(0)
        return self.A @ p - self.delta

    def count(self, tag):
        return sum(t == tag for t in self.tags)

    def to_dict(self):
        return {"d": self.d, "delta": self.delta, "rows": [r.tolist() for r in self.rows],
                "tags": list(self.tags), "sources": [_jsonable(s) for s in self.sources]}

    @classmethod
    def from_dict(cls, d):
        # rows are already normalized; re-normalizing would perturb the last bits
        store = cls(int(d["d"]), float(d["delta"]))
        for row, tag, src in zip(d["rows"], d["tags"], d["sources"]):
            a = np.asarray(row, dtype=float)
            store._seen.add(np.round(a, 12).tobytes())
            store.rows.append(a)
            store.tags.append(tag)
            store.sources.append(src)
        return store


def _jsonable(s):
    if isinstance(s, np.ndarray):
        return s.tolist()
    if isinstance(s, (tuple, list)):
        return [_jsonable(v) for v in s]
    if isinstance(s, np.generic):
        return s.item()
    return s


def compatibility_rows(basis, demo):
    """Positivity rows for every state and decrease rows for every step."""
    Phi = basis.features(demo.states)
    return Phi, -(Phi[1:] - Phi[:-1])


def add_compatibility_constraints(store, basis, demo, demo_id=None, candidate=None):
    """Add the rows of discrete compatibility for ``demo``.

    With ``candidate`` given, rows it already satisfies with slack at least
    ``2*delta`` are skipped. Returns the number of rows added.
    """
    pos, dec = compatibility_rows(basis, demo)
    added = 0
    for rows, tag in ((pos, POSITIVITY), (dec, DECREASE)):
        for j, a in enumerate(rows):
            if candidate is not None:
                na = np.linalg.norm(a)
                if na > 0 and a @ candidate.p / na - store.delta >= 2 * store.delta:
                    continue
            added += store.add(a, tag, (demo_id, j))
    return added


def add_positivity_counterexample(store, basis, x, region=None):
    x = np.asarray(x, dtype=float)
    if region is not None and (region.in_H(x) or not region.in_D(x)):
        raise ValueError(f"counterexample {x} not in D minus H")
    return store.add(basis.features(x), POSITIVITY, x.tolist())


def chebyshev_center(A, b, p_min, p_max):
    """Largest ball in ``{p : A p >= b} ∩ [p_min, p_max]^d`` for unit-norm rows of ``A``.

    Returns ``(center, radius)``; the radius is negative when the set is empty.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    d = A.shape[1]
    b = np.asarray(b, dtype=float).reshape(-1)
    I = np.eye(d)
    # a.p - r >= b  <=>  -a.p + r <= -b; box faces as unit rows
    A_ub = np.vstack([np.hstack([-A, np.ones((len(A), 1))]),
                      np.hstack([-I, np.ones((d, 1))]),
                      np.hstack([I, np.ones((d, 1))])])
    b_ub = np.concatenate([-b, -np.full(d, p_min), np.full(d, p_max)])
    c = np.zeros(d + 1)
    c[-1] = -1.0
    bounds = [(None, None)] * (d + 1)
    res = linprog(c, A_ub=A_ub, b_ub=b_ub, bounds=bounds, method="highs")
    if res.status != 0:
        raise LPSolverFailure(res.message)
    center = np.clip(res.x[:d], p_min, p_max)
    # report the radius the center actually achieves, not the solver's value
    # (they differ by up to the solver's feasibility tolerance)
    depth = np.concatenate([A @ center - b, center - p_min, p_max - center])
    return center, float(min(res.x[-1], depth.min()))


def learn(store, basis, p_min, p_max):
    """Chebyshev-center candidate for the rows in ``store``."""
    A = store.A if len(store) else np.zeros((0, len(basis)))
    center, r = chebyshev_center(A, np.full(len(A), store.delta), p_min, p_max)
    if r <= R_TOL:
        raise LearnerInfeasible(f"Chebyshev radius {r:.3g} <= {R_TOL:g} with {len(store)} rows")
    return CandidateCLF(basis, center, p_min, p_max, r)


def is_discretely_compatible(candidate, demo):
    """Strict positivity at every sample and strict decrease at every step."""
    L = candidate(demo.states)
    return bool(np.all(L > 0) and np.all(np.diff(L) < 0))
