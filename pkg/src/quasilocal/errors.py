"""Exception hierarchy shared by all modules."""

from __future__ import annotations


class QuasiLocalError(Exception):
    """Base class for package errors."""


class RejectedInput(QuasiLocalError, ValueError):
    """Input violates a precondition of the requested operation."""


class GridMismatch(RejectedInput):
    """Fields defined on different sphere grids were combined."""


class HypothesisViolation(RejectedInput):
    """A geometric hypothesis (convexity, spacelike H, ...) fails.

    ``hypothesis`` names the failed condition; ``location`` is an optional
    (theta, phi) pair of the first offending node.
    """

    def __init__(self, message, hypothesis="", location=None):
        if location is not None:
            message = f"{message} (first failure at theta={location[0]:.6g}, phi={location[1]:.6g})"
        super().__init__(message)
        self.hypothesis = hypothesis
        self.location = location


class ConvergenceFailure(QuasiLocalError, RuntimeError):
    """An iterative solver stalled; ``history`` holds its residual log."""

    def __init__(self, message, history=None):
        super().__init__(message)
        self.history = list(history or [])
