"""Exception hierarchy shared by every enhabr module."""


class EnhabrError(Exception):
    """Base class for all domain errors raised by this package."""


class ParseError(EnhabrError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ValidationError(EnhabrError, ValueError):
    pass


class DegenerateTrace(EnhabrError):
    pass


class NotInitialized(EnhabrError):
    pass


class ConfigError(EnhabrError, ValueError):
    pass


class DecodeError(EnhabrError):
    pass


class UnsupportedModel(EnhabrError):
    pass


class OutOfRange(EnhabrError, ValueError):
    pass


class IndexOutOfRange(EnhabrError, IndexError):
    pass


class ZeroThroughput(EnhabrError):
    pass


class WrongClass(EnhabrError):
    pass


class EmptySession(EnhabrError):
    pass


class TraceExhausted(EnhabrError):
    """Raised when a trace ends before even one chunk could be delivered."""


class TraceExhaustedWarning(UserWarning):
    """Emitted when a session is truncated because the trace ran out."""


class MissingPrereq(EnhabrError):
    pass
