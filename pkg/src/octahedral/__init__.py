"""Octahedral six-body collision orbit: regularized flow, shooting search and linear stability."""

from .dynamics import EnergyContext, gamma, grad_gamma, hess_gamma
from .integrator import IntegratorConfig
from .search import find_orbit, solution_at
from .stability import analyze

__all__ = [
    "EnergyContext", "IntegratorConfig", "gamma", "grad_gamma", "hess_gamma",
    "find_orbit", "solution_at", "analyze",
]
