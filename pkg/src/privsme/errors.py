"""Exception types raised across the package."""


class PrivSmeError(Exception):
    """Base class for all package errors."""


class DimensionMismatch(PrivSmeError, ValueError):
    pass


class NotSymmetric(PrivSmeError, ValueError):
    pass


class NotPositiveDefinite(PrivSmeError, ValueError):
    """A matrix that must be SPD has a collapsed (or negative) pivot."""


class NoiseOutOfBound(PrivSmeError, ValueError):
    """A noise sample lies outside its modelled ellipsoid.

    Raised by the plant and the sensors; it always points at a bug in
    whatever generated the sample.
    """


class Infeasible(PrivSmeError):
    """The per-step gain design LMI has no solution."""

    def __init__(self, message, step=None, diagnostics=None):
        super().__init__(message)
        self.step = step
        self.diagnostics = diagnostics or {}


class SolverFailure(PrivSmeError):
    """The conic backend did not converge."""

    def __init__(self, message, step=None, diagnostics=None):
        super().__init__(message)
        self.step = step
        self.diagnostics = diagnostics or {}


class BudgetUndefined(PrivSmeError, ValueError):
    """Privacy budget requested with a decay rate not above the gain."""


class ConfigError(PrivSmeError, ValueError):
    pass
