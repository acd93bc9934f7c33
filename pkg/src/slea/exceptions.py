"""Exception types raised across the package."""


class SleaError(Exception):
    """Base class for all package errors."""


class InvalidArgumentError(SleaError, ValueError):
    pass


class ParseError(SleaError):
    """Malformed document; ``position`` is the character offset of the fault."""

    def __init__(self, message: str, position: int | None = None):
        super().__init__(message if position is None else f"{message} (at position {position})")
        self.position = position


class SchemaError(SleaError):
    """Well-formed document that does not match the expected schema."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


class UnknownClusterError(SleaError, KeyError):
    pass


class InvalidActionError(SleaError, ValueError):
    pass


class NumericError(SleaError, ArithmeticError):
    pass


class TransportError(SleaError):
    pass


class CheckpointCorruptError(SleaError):
    pass


class ConfigError(SleaError, ValueError):
    pass
