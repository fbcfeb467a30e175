"""Exception and warning types shared across the package."""

__all__ = [
    "GenesolError",
    "ParameterError",
    "RankError",
    "DimensionError",
    "ShapeError",
    "EvaluationError",
    "ConstraintError",
    "DomainError",
    "NonConvergenceError",
    "InfeasibleError",
    "ConditioningError",
    "FormatError",
    "ConfigError",
    "StabilityWarning",
]


class GenesolError(Exception):
    """Base class for all package errors."""


class ParameterError(GenesolError, ValueError):
    """An argument violates a documented precondition."""


class RankError(GenesolError, ValueError):
    """An operator was applied to a field of unsupported rank."""


class DimensionError(GenesolError, ValueError):
    """An operator requires a different spatial dimension."""


class ShapeError(GenesolError, ValueError):
    """Arrays or grids do not match."""


class EvaluationError(GenesolError, ArithmeticError):
    """A model evaluation produced non-finite values."""


class ConstraintError(GenesolError, ValueError):
    """A unit-length director constraint is violated."""


class DomainError(GenesolError, ValueError):
    """An argument lies outside the domain of a formula."""


class NonConvergenceError(GenesolError, RuntimeError):
    """Newton iteration failed to reach its tolerance.

    Attributes
    ----------
    residual : float
        Residual norm after the last iteration.
    step_index : int or None
        Index of the failing step when raised from a time loop.
    """

    def __init__(self, message, residual, step_index=None):
        super().__init__(message)
        self.residual = residual
        self.step_index = step_index


class InfeasibleError(GenesolError, RuntimeError):
    """A moment system has no solution on the candidate set.

    Attributes
    ----------
    residual : float
        Best residual found.
    """

    def __init__(self, message, residual):
        super().__init__(message)
        self.residual = residual


class ConditioningError(GenesolError, ArithmeticError):
    """A linear system is rank deficient or badly conditioned."""


class FormatError(GenesolError, ValueError):
    """A file header is malformed or has an unsupported version."""


class StabilityWarning(UserWarning):
    """The requested time step exceeds the stability cap."""


class ConfigError(GenesolError, ValueError):
    """An experiment configuration is missing, unreadable or invalid."""
