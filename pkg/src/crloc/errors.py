"""Exception types shared across the package."""


class CrlocError(Exception):
    """Base class for all package errors."""


class ConfigError(CrlocError):
    """Invalid or unresolvable configuration."""


class DataError(CrlocError):
    """Unreadable or malformed input data (logs, maps, meshes)."""


class QueryOutOfBoundsError(CrlocError):
    """State query outside the grid's arclength or time range."""


class InvalidMeasurementError(CrlocError):
    """Measurement violates its validity gate (e.g. ToF range too short)."""


class InsufficientCalibrationError(CrlocError):
    """Not enough stationary samples to calibrate a sensor bias."""


class UnobservableProblemError(CrlocError):
    """Normal equations remain singular after maximum damping."""
