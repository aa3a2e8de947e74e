"""Exception types shared across the package."""


class MtlsegError(Exception):
    """Base class for all package errors."""


class DimensionError(MtlsegError):
    """Array extents do not satisfy an operation's shape contract."""


class ConfigError(MtlsegError):
    """Invalid configuration or generator parameters."""


class FormatError(MtlsegError):
    """Malformed file content. Carries a byte offset when known."""

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class NumericError(MtlsegError):
    """Non-finite values where finite ones are required."""
