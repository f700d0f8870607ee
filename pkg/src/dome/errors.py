"""Exception hierarchy shared across the package."""


class DomeError(Exception):
    """Base class for all package errors."""


class EmptyInput(DomeError, ValueError):
    pass


class ConfigError(DomeError, ValueError):
    pass


class ShapeError(DomeError, ValueError):
    pass


class DegenerateRow(DomeError, ValueError):
    """A softmax row had no finite entry."""


class StateError(DomeError, RuntimeError):
    pass


class NoExemplar(DomeError, LookupError):
    pass


class InvalidIntent(DomeError, ValueError):
    pass


class InputTooLong(DomeError, ValueError):
    pass


class CorruptCheckpoint(DomeError, ValueError):
    pass


class CorpusFormatError(DomeError, ValueError):
    def __init__(self, message, line=None):
        super().__init__(message if line is None else f"line {line}: {message}")
        self.line = line
