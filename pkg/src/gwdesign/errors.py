"""Exception types raised across the package."""


class GWDesignError(Exception):
    """Base class for all package errors."""


class InvalidArgumentError(GWDesignError, ValueError):
    pass


class DegenerateDistributionError(InvalidArgumentError):
    """Samples have zero spread, so a bandwidth cannot be chosen."""


class OutOfDomainError(InvalidArgumentError):
    """A query point lies outside the closed mesh rectangle."""


class NumericalFailureError(GWDesignError, ArithmeticError):
    """A linear solve or eigensolve failed; ``residual`` is kept when known."""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class InvalidStateError(GWDesignError, RuntimeError):
    pass


class ContractViolationError(GWDesignError, RuntimeError):
    """An operation was called in a state its contract forbids."""


class ChainFailureError(GWDesignError, RuntimeError):
    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}
