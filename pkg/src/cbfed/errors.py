"""Exception types raised across the package."""

__all__ = [
    "CBFeDError",
    "ShapeMismatch",
    "NonZeroMean",
    "UnsupportedP",
    "TooManyModes",
    "GridMismatch",
    "RegimeError",
    "OutOfRegime",
    "ChannelOutOfRange",
    "ZeroJumpSize",
    "RateBudgetExceeded",
    "BlowUp",
    "InsufficientRecords",
    "MismatchedConfigs",
    "SchemaError",
]


class CBFeDError(Exception):
    """Base class for all package errors."""


class ShapeMismatch(CBFeDError, ValueError):
    pass


class NonZeroMean(CBFeDError, ValueError):
    pass


class UnsupportedP(CBFeDError, ValueError):
    pass


class TooManyModes(CBFeDError, ValueError):
    pass


class GridMismatch(CBFeDError, ValueError):
    pass


class RegimeError(CBFeDError, ValueError):
    """Parameters fall outside the validated solvability regime."""


# the operators module calls it OutOfRegime; same failure
OutOfRegime = RegimeError


class ChannelOutOfRange(CBFeDError, IndexError):
    pass


class ZeroJumpSize(CBFeDError, ValueError):
    pass


class RateBudgetExceeded(CBFeDError, RuntimeError):
    """Expected number of kicks over a run exceeds the configured cap."""


class BlowUp(CBFeDError, FloatingPointError):
    """Numerical instability: the H-norm crossed the blow-up threshold."""

    def __init__(self, message, time=None):
        super().__init__(message)
        self.time = time


class InsufficientRecords(CBFeDError, ValueError):
    pass


class MismatchedConfigs(CBFeDError, ValueError):
    pass


class SchemaError(CBFeDError, ValueError):
    """Malformed run configuration; ``field`` names the offending key."""

    def __init__(self, message, field=None):
        super().__init__(f"{field}: {message}" if field else message)
        self.field = field
