"""Exception hierarchy.

The CLI maps ``PreconditionError`` (and subclasses) to exit code 2 and
``NumericError`` (and subclasses) to exit code 3.
"""


class QPLabError(Exception):
    """Base class for all package errors."""


class PreconditionError(QPLabError, ValueError):
    """An input violates the contract of the operation."""


class DomainError(PreconditionError):
    """Argument outside the mathematical domain (e.g. alpha not in (0,1))."""


class RangeError(PreconditionError):
    """Index outside the window a source or solution can evaluate."""


class InsufficientDataError(PreconditionError):
    """Too few samples/scales to produce an estimate."""


class ConstructionError(PreconditionError):
    """A requested construction is not feasible at the available width."""


class NumericError(QPLabError, ArithmeticError):
    """A numerical procedure failed (overflow, non-convergence, lost invariant)."""


class TruncationError(NumericError):
    """Adaptive truncation did not converge before the maximal length."""
