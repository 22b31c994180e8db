"""Exception types shared across the package."""


class DimensionError(ValueError):
    """Operand shapes are incompatible."""


class ContractError(ValueError):
    """A documented precondition was violated."""


class NumericError(ArithmeticError):
    """A computation produced a non-finite value."""


class DomainError(NumericError):
    """An argument lies outside the domain of a function (e.g. log of 0)."""


class DataError(ValueError):
    """An instance or dataset record is inconsistent."""


class ConfigError(ValueError):
    """A configuration document is invalid."""


class ParseError(DataError):
    """A serialized record could not be parsed."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line
