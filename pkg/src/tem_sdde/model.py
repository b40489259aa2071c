"""Coefficients of the delay Ait-Sahalia short-rate model with Poisson jumps.

The model is

    dx(t) = f(x(t-)) dt + phi(x((t - tau)-)) g(x(t-)) dB(t) + h(x(t-)) dN(t)

with drift ``f(x) = a_{-1}/x - a_0 + a_1 x - a_2 x**rho``, diffusion
``g(x) = x**theta`` and jump coefficient ``h(x) = a_3 x``.  ``phi`` is a
bounded volatility map applied to the lagged state and ``N`` is a Poisson
process with intensity ``lam``.

All coefficient evaluators accept floats or numpy arrays and return the
same kind.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .errors import ModelDomainError


def _out(value, like):
    if np.ndim(like) == 0 and not isinstance(like, np.ndarray):
        return float(value)
    return value


@dataclass(frozen=True)
class ModelParams:
    alpha_m1: float
    alpha_0: float
    alpha_1: float
    alpha_2: float
    alpha_3: float
    rho: float = 2.0
    theta: float = 1.25
    tau: float = 1.0
    lam: float = 0.25

    @property
    def k9(self) -> float:
        """Sum of the five coefficients, the scale of the default dominating map."""
        return self.alpha_m1 + self.alpha_0 + self.alpha_1 + self.alpha_2 + self.alpha_3

    def replace(self, **changes) -> "ModelParams":
        return replace(self, **changes)


# Coefficient sets of the worked example: with and without the 1/x floor term.
# The jump intensity is not part of those sets; 0.25 is this package's choice.
TABLE1 = ModelParams(alpha_m1=0.2, alpha_0=0.3, alpha_1=0.2, alpha_2=0.5, alpha_3=1.0)
TABLE2 = ModelParams(alpha_m1=0.0, alpha_0=0.3, alpha_1=0.2, alpha_2=0.5, alpha_3=1.0)


@dataclass
class ValidationReport:
    failures: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.failures

    def __bool__(self) -> bool:
        return self.ok

    def __str__(self) -> str:
        if self.ok:
            return "valid"
        return "; ".join(self.failures)


def validate_params(params: ModelParams) -> ValidationReport:
    """Check every parameter invariant and name each one that fails."""
    report = ValidationReport()
    checks = [
        (params.rho > 1, "drift exponent: rho > 1"),
        (params.theta > 1, "diffusion exponent: theta > 1"),
        (1 + params.rho > 2 * params.theta, "growth condition: 1 + rho > 2*theta"),
        (params.alpha_m1 >= 0, "nonnegativity of alpha_m1"),
        (params.alpha_0 >= 0, "nonnegativity of alpha_0"),
        (params.alpha_1 >= 0, "nonnegativity of alpha_1"),
        (params.alpha_2 > 0, "positivity of alpha_2"),
        (params.alpha_3 > 0, "positivity of alpha_3"),
        (params.tau > 0, "positivity of tau"),
        (params.lam >= 0, "nonnegativity of lambda"),
    ]
    for ok, name in checks:
        # NaN fields fail every comparison and land here too
        if not ok:
            report.failures.append(name)
    return report


def _power(x, exponent: float):
    if float(exponent).is_integer():
        return np.power(x, int(exponent))
    return np.exp(exponent * np.log(x))


def drift_unchecked(params: ModelParams, x):
    return (
        params.alpha_m1 / x
        - params.alpha_0
        + params.alpha_1 * x
        - params.alpha_2 * _power(x, params.rho)
    )


def diffusion_unchecked(params: ModelParams, x):
    # x**theta with 0**theta = 0; log(0) would give exp(-inf) = 0 anyway
    with np.errstate(divide="ignore"):
        return _power(x, params.theta)


def eval_drift(params: ModelParams, x):
    """Evaluate ``a_{-1}/x - a_0 + a_1 x - a_2 x**rho`` for ``x > 0``."""
    arr = np.asarray(x, dtype=float)
    if np.any(~(arr > 0)):
        raise ModelDomainError("drift is defined only for x > 0")
    return _out(drift_unchecked(params, arr), x)


def eval_diffusion(params: ModelParams, x):
    """Evaluate ``x**theta`` for ``x >= 0``."""
    arr = np.asarray(x, dtype=float)
    if np.any(~(arr >= 0)):
        raise ModelDomainError("diffusion is defined only for x >= 0")
    return _out(diffusion_unchecked(params, arr), x)


def eval_jump(params: ModelParams, x):
    """Jump coefficient ``a_3 x``, extended by zero to negative states."""
    arr = np.asarray(x, dtype=float)
    return _out(np.where(arr >= 0, params.alpha_3 * arr, 0.0), x)


def sigmoid_phi(y):
    """Sigmoid-type volatility map.

    For ``y >= 0`` this is ``(1 + e^y - e^-y) / (2 (e^y + e^-y))``, evaluated
    after dividing through by ``e^y`` so that large ``y`` does not overflow.
    Negative arguments map to the constant 1/4, which is also the value at 0.
    """
    arr = np.asarray(y, dtype=float)
    e = np.exp(-2.0 * np.abs(arr))
    em = np.sqrt(e)  # e^{-|y|}
    pos = 0.5 * (em + 1.0 - e) / (1.0 + e)
    return _out(np.where(arr >= 0, pos, 0.25), y)


# sup of sigmoid_phi is sqrt(5)/4 = 0.559017 at y = ln(2 + sqrt 5)
SIGMOID_SUP = math.sqrt(5.0) / 4.0


@dataclass(frozen=True)
class _Constant:
    value: float

    def __call__(self, y):
        return _out(np.full(np.shape(y), self.value, dtype=float), y)


@dataclass(frozen=True)
class VolatilityFunction:
    """Bounded volatility map of the lagged state.

    ``eval`` must be vectorised.  Calling the object applies the extension
    ``phi(y) = phi(0)`` for negative ``y``.
    """

    eval: Callable
    sigma_bound: float
    description: str = ""

    def __call__(self, y):
        arr = np.asarray(y, dtype=float)
        vals = np.asarray(self.eval(np.maximum(arr, 0.0)), dtype=float)
        return _out(vals, y)


SIGMOID = VolatilityFunction(sigmoid_phi, sigma_bound=0.5591, description="sigmoid")


def constant_volatility(c: float) -> VolatilityFunction:
    if c < 0:
        raise ValueError("constant volatility must be nonnegative")
    return VolatilityFunction(_Constant(float(c)), sigma_bound=max(float(c), 1e-300),
                              description=f"constant {c!r}")


@dataclass(frozen=True)
class InitialSegment:
    """Initial data on ``[-tau, 0]`` with a declared Hoelder modulus."""

    values: Callable
    holder_gamma: float = 1.0
    holder_const: float = 0.0

    def __call__(self, t):
        return self.values(t)

    def check(self, tau: float, n: int = 201) -> ValidationReport:
        """Sample the segment and check positivity and the Hoelder bound."""
        report = ValidationReport()
        if not 0 < self.holder_gamma <= 1:
            report.failures.append("Hoelder exponent in (0, 1]")
        if self.holder_const < 0:
            report.failures.append("Hoelder constant >= 0")
        t = np.linspace(-tau, 0.0, n)
        v = np.asarray(self.values(t), dtype=float)
        if np.any(~(v > 0)):
            report.failures.append("initial segment positive on [-tau, 0]")
        dv = np.abs(v[:, None] - v[None, :])
        dt = np.abs(t[:, None] - t[None, :])
        bound = self.holder_const * dt**self.holder_gamma
        if np.any(dv > bound + 1e-12 * np.maximum(1.0, np.abs(v).max())):
            report.failures.append("Hoelder continuity of the initial segment")
        return report


def constant_segment(value: float) -> InitialSegment:
    return InitialSegment(_Constant(float(value)), holder_gamma=1.0, holder_const=0.0)
