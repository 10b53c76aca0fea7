"""Exception types shared across the package."""


class BSPMLError(Exception):
    """Base class for all errors raised by bspml."""


class ConfigError(BSPMLError, ValueError):
    """Invalid hyperparameter or experiment configuration."""


class ContractError(BSPMLError, ValueError):
    """A function was called with inputs violating its preconditions."""


class IngestionError(BSPMLError, ValueError):
    """A dataset file could not be parsed into a valid Dataset."""


class NumericError(BSPMLError, ArithmeticError):
    """A non-finite value appeared where a finite one is required."""

    def __init__(self, message, *, iteration=None, trace=None):
        super().__init__(message)
        self.iteration = iteration
        self.trace = trace
