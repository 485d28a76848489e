"""Exception taxonomy; the CLI maps these onto exit codes."""


class UnicError(Exception):
    """Base for all package errors."""


class DataFormatError(UnicError):
    """Malformed or inconsistent persisted data (exit code 3)."""


class MagicError(DataFormatError):
    pass


class VersionError(DataFormatError):
    pass


class TruncationError(DataFormatError):
    pass


class DimensionError(DataFormatError):
    pass


class NumericError(UnicError):
    """Non-finite values or solver divergence (exit code 4)."""

    def __init__(self, message, frame=None):
        super().__init__(message if frame is None else f"{message} (frame {frame})")
        self.frame = frame
