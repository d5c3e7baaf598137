class AutobrakeError(Exception):
    """Base class for errors raised by this package."""


class ConfigurationError(AutobrakeError, ValueError):
    """Shapes, sizes or settings that do not fit together."""


class NumericError(AutobrakeError, ArithmeticError):
    """A non-finite value showed up in a loss or gradient."""


class UsageError(AutobrakeError, RuntimeError):
    """An operation was called in a state that does not allow it."""


class ParseError(AutobrakeError, ValueError):
    """Malformed checkpoint or config stream.

    ``offset`` is the byte offset in the stream where parsing failed.
    """

    def __init__(self, message, offset):
        super().__init__(f"{message} (at byte {offset})")
        self.offset = offset
