"""Exception types raised by caflow."""


class CaflowError(Exception):
    """Base class for all caflow errors."""


class CalibrationError(CaflowError):
    """Missing or malformed calibration sidecar."""


class FormatError(CaflowError):
    """A file or array does not have the expected layout."""


class TruncatedFileError(FormatError, OSError):
    """A binary file ended before its declared payload."""


class InsufficientDataError(CaflowError):
    """Too few frames or pixels to compute anything."""


class ParameterError(CaflowError, ValueError):
    """An argument is outside its documented domain."""


class OutOfBoundsError(ParameterError):
    """A window or region falls outside the valid area."""


class NoMotionError(CaflowError):
    """Ground truth was requested for a model that does not move."""
