"""Exception types shared across the toolkit."""


class CafeqError(Exception):
    """Base class for all toolkit errors."""


class ShapeError(CafeqError, ValueError):
    """Operands have incompatible shapes; the message names both."""


class ConfigError(CafeqError, ValueError):
    """A configuration value violates its contract."""


class NumericalError(CafeqError, ArithmeticError):
    """A numerical operation failed (singular matrix, NaN loss, ...)."""

    def __init__(self, message, *, iteration=None, block_index=None, trace=None):
        super().__init__(message)
        self.iteration = iteration
        self.block_index = block_index
        self.trace = trace


class ConvergenceError(NumericalError):
    """An iterative routine hit its iteration cap without converging."""

    def __init__(self, message, *, iterations=None):
        super().__init__(message, iteration=iterations)
        self.iterations = iterations
