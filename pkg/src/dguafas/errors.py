"""Exception types raised across the package."""


class DguaError(Exception):
    """Base class for every error raised by dguafas."""


class DimensionError(DguaError, ValueError):
    pass


class DomainError(DguaError, ValueError):
    """A value fell outside the domain of a function (e.g. log of 0)."""

    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


class NumericError(DguaError, ArithmeticError):
    pass


class ContractError(DguaError, RuntimeError):
    """A precondition or postcondition of an operation was violated."""


class ArchitectureError(DguaError, ValueError):
    pass


class ProtocolError(DguaError, ValueError):
    pass


class ParseError(DguaError, ValueError):
    def __init__(self, message, line=None):
        super().__init__(message if line is None else f"line {line}: {message}")
        self.line = line


class SchemaError(DguaError, ValueError):
    pass


class UndefinedMetricError(DguaError, ValueError):
    pass


class DivergenceError(DguaError, FloatingPointError):
    """Training produced a non-finite or exploding loss term."""

    def __init__(self, term, value, epoch=None, step=None):
        where = "" if epoch is None else f" (epoch {epoch}, step {step})"
        super().__init__(f"loss term '{term}' diverged: {value!r}{where}")
        self.term = term
        self.value = value


class ChecksumError(DguaError, IOError):
    pass
