"""Dataclass configs shared by the synthesis loop, the CLI and the scripts."""
from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from typing import Optional


@dataclass
class DemonstratorConfig:
    max_outer_iterations: int = 200
    regularization_init: float = 1e-6
    convergence_tol: float = 1e-9
    terminal_weight: float = 100.0
    constraint_penalty_weight: float = 1e3
    penalty_escalations: int = 3

    def __post_init__(self):
        for f in dataclasses.fields(self):
            if getattr(self, f.name) <= 0 and f.name != "penalty_escalations":
                raise ValueError(f"{f.name} must be positive")


@dataclass
class DEConfig:
    """best/1/bin differential evolution settings for the positivity falsifier."""

    population: int = 40
    F_weight: float = 0.7
    crossover: float = 0.9
    generations: int = 200
    restarts: int = 3
    rng_seed: int = 0

    def __post_init__(self):
        if self.population < 4:
            raise ValueError("best/1/bin needs a population of at least 4")
        if not 0 < self.F_weight < 2 or not 0 < self.crossover < 1:
            raise ValueError("F_weight must lie in (0, 2) and crossover in (0, 1)")


@dataclass
class SamplingBudget:
    acceptance_threshold: int = 2000
    max_total: int = 1_000_000
    rng_seed: int = 0

    def __post_init__(self):
        if self.acceptance_threshold < 1:
            raise ValueError("acceptance threshold must be >= 1")


@dataclass
class SynthesisConfig:
    """Everything a synthesis run depends on.

    Box bounds and cost scales left at ``None`` fall back to the benchmark
    defaults (see :mod:`clf_forge.benchmarks`).
    """

    benchmark: str = "pendulum"
    h: float = 0.05
    horizon: float = 10.0
    t_min: float = 0.5
    gamma: float = 0.01
    eps0: float = 0.05
    D_low: Optional[list] = None
    D_high: Optional[list] = None
    S_low: Optional[list] = None
    S_high: Optional[list] = None
    q_lqr: float = 1.0
    r_lqr: float = 1.0
    basis_degree: int = 2
    even_only: bool = True
    basis_exponents: Optional[list] = None
    p_bound: float = 10.0
    accept_n: int = 2000
    max_total_samples: int = 1_000_000
    max_demonstrations: int = 200
    relearn_cap: int = 500
    rng_seed: int = 0
    mode: str = "learn_clf"
    known_clf: Optional[dict] = None
    seed_demos: str = "axes"
    suffix_expansion: bool = True
    short_suffixes: bool = False
    tracking_terminal: str = "equilibrium"
    prefilter_k: int = 100
    performance_oversampling: int = 0
    periodic_positivity_check: bool = False
    positivity_check_every: int = 5000
    delta_margin: float = 1e-6
    workers: int = 1
    batch_size: int = 64
    demonstrator: DemonstratorConfig = field(default_factory=DemonstratorConfig)
    de: DEConfig = field(default_factory=DEConfig)

    def __post_init__(self):
        if isinstance(self.demonstrator, dict):
            self.demonstrator = DemonstratorConfig(**self.demonstrator)
        if isinstance(self.de, dict):
            self.de = DEConfig(**self.de)
        if not 0 < self.gamma < 1:
            raise ValueError("gamma must lie in (0, 1)")
        if self.t_min <= 0 or self.h <= 0:
            raise ValueError("t_min and h must be positive")
        ratio = self.t_min / self.h
        if abs(ratio - round(ratio)) > 1e-9:
            raise ValueError("t_min must be a multiple of h")
        if self.tracking_terminal not in ("equilibrium", "Q"):
            raise ValueError(f"unknown tracking terminal weight {self.tracking_terminal!r}")
        if self.mode not in ("learn_clf", "known_clf"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.mode == "known_clf" and self.known_clf is None:
            raise ValueError("known_clf mode needs a CLF")

    @property
    def t_min_steps(self):
        return int(round(self.t_min / self.h))

    @property
    def horizon_steps(self):
        return int(round(self.horizon / self.h))

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    def digest(self):
        """Hash identifying runs that may share a checkpoint (``workers`` excluded)."""
        d = self.to_dict()
        d.pop("workers")
        blob = json.dumps(d, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]
