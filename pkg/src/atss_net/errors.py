"""Exception types shared across the package.

The CLI maps these onto exit codes, so library code raises them instead of
calling ``sys.exit``.
"""


class AtssError(Exception):
    """Base class for all package errors."""


class ShapeError(AtssError, ValueError):
    """Array extents do not match what an operation expects."""


class TooShortError(AtssError, ValueError):
    """Signal is shorter than one analysis frame."""


class ConfigError(AtssError, ValueError):
    """Invalid configuration value or unknown configuration key."""


class DataError(AtssError, ValueError):
    """Missing, malformed, or insufficient input data."""


class CheckpointError(DataError):
    """Checkpoint file is malformed or has the wrong magic/version."""


class NumericError(AtssError, ArithmeticError):
    """A NaN or Inf appeared where finite values are required."""

    def __init__(self, message, state=None):
        super().__init__(message)
        # whatever partial training state the caller may want to dump
        self.state = state
