"""Exception types raised across the package."""

from __future__ import annotations


class ModelDomainError(ValueError):
    """A coefficient function was evaluated outside its domain."""


class StepSizeError(ValueError):
    """A step size is not admissible for the truncation rule."""


class GridError(ValueError):
    """Time grids are inconsistent with each other or with the delay."""


class HorizonError(ValueError):
    """A contract horizon exceeds the simulated horizon."""


class InsufficientSampleError(ValueError):
    """Too few usable paths for a Monte Carlo estimate."""


class DegenerateFitError(ValueError):
    """A log-log fit cannot be formed from the given points."""


class NonFiniteStateError(ArithmeticError):
    """A scheme produced NaN or infinite states."""

    def __init__(self, message: str, step: int | None = None):
        if step is not None:
            message = f"step {step}: {message}"
        super().__init__(message)
        self.step = step


class NoRealRootError(ArithmeticError):
    """The implicit step equation has no real root."""

    def __init__(self, message: str, step: int | None = None):
        if step is not None:
            message = f"step {step}: {message}"
        super().__init__(message)
        self.step = step
