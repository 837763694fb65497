"""Exception types shared across the package."""


class LatTrajError(Exception):
    """Base class for package errors."""


class CapacityError(LatTrajError):
    """A requested object exceeds a configured size cap."""


class StatisticsError(LatTrajError, ValueError):
    """An operation was requested for an incompatible particle statistics."""


class DimensionMismatchError(LatTrajError, ValueError):
    """Operator and state dimensions do not agree."""


class DegenerateRateError(LatTrajError, ValueError):
    """The total detection rate vanishes, so no outcome can be drawn."""


class StepSizeError(LatTrajError, RuntimeError):
    """A single integration step changed the state more than allowed."""


class ResolutionFitError(LatTrajError, RuntimeError):
    """The quadratic overlap model does not describe the point spread function."""


class DiffusionFitError(LatTrajError, RuntimeError):
    """A linear diffusion fit was requested outside the diffusive regime."""


class ConfigError(LatTrajError, ValueError):
    """A run configuration failed validation."""
