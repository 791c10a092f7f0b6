"""Bayesian inference for censored multivariate threshold excesses.

Dirichlet-mixture angular measures, generalized-Pareto margins, a censored
Poisson-process likelihood handled by data augmentation, and a
trans-dimensional Metropolis-within-Gibbs sampler.
"""

from .errors import DomainError, NumericalError
from .dm_core import DmParams, FailureRegion
from .margins import MarginParams, ReturnLevelQuery

__all__ = [
    "DomainError",
    "NumericalError",
    "DmParams",
    "FailureRegion",
    "MarginParams",
    "ReturnLevelQuery",
]

__version__ = "0.1.0"
