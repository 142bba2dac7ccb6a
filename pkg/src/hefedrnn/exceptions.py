"""Error types raised across the package."""


class HeFedError(Exception):
    """Base class for all package errors."""


class DimensionError(HeFedError, ValueError):
    """Shapes or slot counts do not fit."""


class StateError(HeFedError):
    """Operation applied to a value in the wrong encryption state."""


class LevelError(HeFedError):
    """Multiplicative depth exhausted; the ciphertext needs a bootstrap."""


class LayoutError(HeFedError, ValueError):
    """Incompatible or infeasible block layout."""


class ProtocolError(HeFedError):
    """A federation phase could not complete (e.g. a party did not report)."""


class ConvergenceError(HeFedError):
    """Remez exchange failed to converge.

    The last error profile is kept on ``profile`` as an (x, error) pair of
    arrays so callers can inspect where the fit went wrong.
    """

    def __init__(self, message, profile=None):
        super().__init__(message)
        self.profile = profile


class ConfigError(HeFedError, ValueError):
    """Invalid run configuration."""


class DataError(HeFedError, ValueError):
    """Malformed or degenerate input data."""
