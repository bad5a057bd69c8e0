"""Exception hierarchy shared by the library and the command line front end."""


class StarSpecError(Exception):
    """Base class for all errors raised by starspec."""


class DomainError(StarSpecError, ValueError):
    """An argument lies outside the domain of the operation."""


class ValidationError(StarSpecError, ValueError):
    """User supplied configuration is inconsistent or incomplete."""


class NumericalError(StarSpecError, RuntimeError):
    """A numerical procedure failed (non-convergence, breakdown, ...)."""


class NonCompactStarError(NumericalError):
    """The enthalpy never reached zero before the radius cap."""


class ToleranceError(NumericalError):
    """A root find or refinement could not meet its tolerance."""


class DegenerateError(NumericalError):
    """The configuration sits on a degenerate point (M'(mu) = 0, dR = 0, ...)."""


class AssemblyError(NumericalError):
    """Matrix assembly met inadmissible data."""


class ShellCrossingError(NumericalError):
    """Lagrangian mass shells crossed (r no longer strictly increasing)."""
