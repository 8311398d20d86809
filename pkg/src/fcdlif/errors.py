"""Exception hierarchy shared across the package."""


class FcdlifError(Exception):
    """Base class for all package-specific errors."""


class ShapeError(FcdlifError, ValueError):
    """Tensor or array extents are incompatible with the requested operation."""


class ConfigurationError(FcdlifError, ValueError):
    """A configuration object or parameter combination is invalid."""


class FixedLengthError(FcdlifError, ValueError):
    """A fixed-length model received an input with the wrong frame count."""


class GraphError(FcdlifError, RuntimeError):
    """Misuse of the autodiff graph (non-scalar loss, repeated backward)."""


class NumericsError(FcdlifError, FloatingPointError):
    """A NaN or Inf was produced where finite values are required."""


class SingularModelError(FcdlifError, ValueError):
    """Kinetic model parameters make the model singular (k2 + k3 = 0)."""


class CalibrationError(FcdlifError, RuntimeError):
    """The arterial-line calibration pipeline cannot produce a valid factor."""


class FileFormatError(FcdlifError, ValueError):
    """A data file is malformed, truncated, or fails its integrity check."""
