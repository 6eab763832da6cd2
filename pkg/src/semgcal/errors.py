"""Exception types shared across the package."""


class SemgCalError(Exception):
    """Base class for every error raised by this package."""


class ShapeError(SemgCalError, ValueError):
    """An array has the wrong shape, channel count or column count."""


class ParameterError(SemgCalError, ValueError):
    """A configuration value is outside its valid range."""


class EmptyInputError(SemgCalError, ValueError):
    """The input stream is too short for the requested operation."""


class DataError(SemgCalError, ValueError):
    """Dataset content violates a contract (missing class, too few examples, ...)."""


class NumericError(SemgCalError, ArithmeticError):
    """Numerical failure: NaN gradients, singular covariance, zero-variance effect."""


class UsageError(SemgCalError, RuntimeError):
    """API misuse, e.g. backward through a detached graph or a missing domain head."""


class ParseError(SemgCalError, ValueError):
    """Malformed dataset file; the message carries file and line."""
