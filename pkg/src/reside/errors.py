"""Exception hierarchy shared by every module."""


class ResideError(Exception):
    """Base class for all package errors."""


class DimensionError(ResideError, ValueError):
    pass


class NumericError(ResideError, ArithmeticError):
    pass


class ContractError(ResideError, ValueError):
    pass


class ConfigError(ResideError, ValueError):
    pass


class ParseError(ResideError, ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ValidationError(ParseError):
    pass


class ArtifactMismatchError(ResideError):
    """A checkpoint does not fit the model it is being loaded into."""
