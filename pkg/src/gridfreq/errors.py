"""
Error types raised by gridfreq.
"""

from typing import Any, Optional


class GridFreqError(Exception):
    """Base class for every gridfreq failure."""


class ValidationError(GridFreqError, ValueError):
    """An input violates a model invariant."""


class ParseError(GridFreqError, ValueError):
    """
    A scenario document could not be read.

    Args:
        message: What went wrong
        line: Line number reported by the TOML decoder, if any
        field: Dotted path of the offending field, if known
    """

    def __init__(self, message: str, line: Optional[int] = None, field: Optional[str] = None):
        self.line = line
        self.field = field
        location = []
        if line is not None:
            location.append(f"line {line}")
        if field is not None:
            location.append(f"field '{field}'")
        if location:
            message = f"{message} ({', '.join(location)})"
        super().__init__(message)


class NotConnectedError(ValidationError):
    """The graph (or its Laplacian) has more than one connected component."""


class UnbalancedError(ValidationError):
    """Injections do not sum to zero."""


class WrongFamilyError(ValidationError):
    """The operation only applies to quadratic costs."""


class InfeasibleError(ValidationError):
    """Capacity limits cannot cover the requested balancing power."""


class UnjoinableError(GridFreqError):
    """Communication components cannot be merged through power lines."""


class SingularError(GridFreqError):
    """A steady-state system matrix is singular."""


class NonFiniteError(GridFreqError, ArithmeticError):
    """The integrator produced a non-finite state (usually: dt too large)."""

    def __init__(self, message: str, time: float):
        self.time = time
        super().__init__(f"{message} at t={time:.6g} s")


class NoConvergenceError(GridFreqError):
    """Steady state was not reached; the partial trajectory is attached."""

    def __init__(self, message: str, trajectory: Any = None):
        self.trajectory = trajectory
        super().__init__(message)
