"""Counterexample-guided synthesis of LQR switching controllers certified by
learned control-Lyapunov functions."""

from .benchmarks import BENCHMARKS, build, default_config
from .clf_learner import CandidateCLF, InequalityStore, LearnerInfeasible, PolynomialBasis
from .config import DEConfig, DemonstratorConfig, SamplingBudget, SynthesisConfig
from .synthesis import SynthesisReport, resume, synthesize

__all__ = [
    "BENCHMARKS", "build", "default_config", "CandidateCLF", "InequalityStore", "LearnerInfeasible",
    "PolynomialBasis", "DEConfig", "DemonstratorConfig", "SamplingBudget", "SynthesisConfig",
    "SynthesisReport", "resume", "synthesize",
]
__version__ = "0.1.0"
