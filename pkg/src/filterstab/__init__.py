"""Stability analysis for Wonham filters of finite-state HMMs.

Twin filters from mismatched priors, chi-square divergence decay and
rate fitting, Monte-Carlo backward-map estimation, and structural
observability / ergodicity / detectability analysis.
"""

__version__ = "0.1.0"

from . import backward, benchmark, errors, model_core, simulate, stability, structure
from .model_core import FiniteHmm

__all__ = [
    "FiniteHmm",
    "backward",
    "benchmark",
    "errors",
    "model_core",
    "simulate",
    "stability",
    "structure",
    "__version__",
]
