"""Exception types shared across the package."""


class RdeepcError(Exception):
    """Base class for all package errors."""


class InvalidInput(RdeepcError, ValueError):
    """Malformed, non-finite or dimensionally inconsistent input."""


class InsufficientData(RdeepcError, ValueError):
    """Not enough samples to build the requested structure."""


class InvalidState(RdeepcError, RuntimeError):
    """Operation not permitted in the current state (e.g. downdating an empty matrix)."""


class Infeasible(RdeepcError, RuntimeError):
    """The optimization problem has no feasible point."""


class MaxIterations(RdeepcError, RuntimeError):
    """Iteration budget exhausted. ``result`` holds the best iterate."""

    def __init__(self, message, result=None):
        super().__init__(message)
        self.result = result
