class InvalidInputError(ValueError):
    """Raised for malformed arguments: shape mismatches, out-of-range labels, bad radii."""


class InvalidConfigError(ValueError):
    """Raised when a configuration cannot be honoured (batch larger than data, bad q, ...)."""


class EmptyNeighborhoodError(LookupError):
    """A local statistic was requested over a ball holding no same-class samples."""


class TrainingFailedError(RuntimeError):
    """An optimisation run produced a non-finite loss."""
