"""Exception hierarchy shared across the package."""


class OchstreamError(Exception):
    """Base class for all package errors."""


class ConfigError(OchstreamError):
    """Invalid construction-time parameters (bad dimension, negative rates, ...)."""


class InputError(OchstreamError):
    """A per-call argument violates the operation's preconditions."""


class StateError(OchstreamError):
    """Operation is invalid in the current state (e.g. querying an empty histogram)."""


class UsageError(OchstreamError):
    """API misuse such as duplicate or unknown ids."""


class FormatError(OchstreamError):
    """Malformed serialized data. Carries the byte offset when known."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class DataError(OchstreamError):
    """Malformed stream input. Carries the line number when known."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"{message} (line {line})"
        super().__init__(message)
        self.line = line
