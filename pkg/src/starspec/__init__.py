"""Equilibria, unstable-mode counts and radial dynamics of viscous gaseous stars."""
from .eos import Polytrope, WhiteDwarf, make_eos
from .equilibrium import StarProfile, profile_query, solve_profile
from .errors import (
    DegenerateError, DomainError, NumericalError, StarSpecError, ValidationError,
)

__all__ = [
    "Polytrope", "WhiteDwarf", "make_eos", "StarProfile", "profile_query", "solve_profile",
    "DegenerateError", "DomainError", "NumericalError", "StarSpecError", "ValidationError",
]
__version__ = "0.1.0"
