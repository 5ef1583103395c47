"""Exception hierarchy shared by all submodules."""

from __future__ import annotations


class KellerSegelError(Exception):
    """Base class for every error raised by the package."""


class InvalidState(KellerSegelError, ValueError):
    """A state vector or field contains non-finite values."""


class DomainError(KellerSegelError, ValueError):
    """An argument lies outside the domain of the operation."""


class IntegrationFailure(KellerSegelError):
    """The profile integration left the admissible region.

    Attributes
    ----------
    y : float
        Location of the offending node.
    """

    def __init__(self, message: str, y: float):
        super().__init__(f"{message} (at y={y:.6g})")
        self.y = float(y)


class OutOfUniquenessRange(KellerSegelError, ValueError):
    """Requested mass is not below the uniqueness threshold."""


class NumericalError(KellerSegelError):
    """Root bracketing or another numerical procedure failed."""


class WeightOverflow(KellerSegelError):
    """Weighted integrand is not negligible at the box boundary."""


class PositivityError(KellerSegelError):
    """Cell density became negative beyond the tolerance."""


class InstabilityError(KellerSegelError):
    """Time stepping blew up; carries the last stable state."""

    def __init__(self, message: str, last_state=None):
        super().__init__(message)
        self.last_state = last_state


class LocalizationError(KellerSegelError):
    """A field is not negligible at the periodic boundary."""


class ConfigError(KellerSegelError, ValueError):
    """Malformed or unknown configuration entry."""


class UniquenessWarning(UserWarning):
    """Mass above the threshold where profile uniqueness is guaranteed."""
