"""Exception types raised by gptraj."""

import numpy as np


class GpTrajError(Exception):
    """Base class for all library errors."""


class DimensionMismatchError(GpTrajError, ValueError):
    pass


class NotPositiveDefiniteError(GpTrajError, np.linalg.LinAlgError):
    pass


class NonFiniteError(GpTrajError, FloatingPointError):
    """A simulated or propagated state left the finite range.

    ``step`` is the index of the first offending state.
    """

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class UnsupportedMethodError(GpTrajError):
    pass


class DegenerateSpectrumError(GpTrajError):
    """Fewer usable eigenpairs than requested; ``achievable`` holds the count."""

    def __init__(self, message, achievable):
        super().__init__(message)
        self.achievable = achievable


class InsufficientSamplesError(GpTrajError, ValueError):
    pass


class ConfigInvalid(GpTrajError, ValueError):
    """Configuration rejected; ``field`` names the offending dotted key."""

    def __init__(self, message, field=None, line=None):
        where = field if field is not None else "config"
        if line is not None:
            where = f"{where} (line {line})"
        super().__init__(f"{where}: {message}")
        self.field = field
        self.line = line
