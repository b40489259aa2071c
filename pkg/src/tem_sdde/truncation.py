"""Truncation machinery for the explicit scheme.

A dominating map ``mu`` bounds ``|f| v g`` on ``[1/r, r]``; a decreasing map
``pi`` of the step size sets the truncation level.  For a step ``delta`` the
state is clamped into ``[1/mu_inv(pi(delta)), mu_inv(pi(delta))]`` before
the drift and diffusion are evaluated, which keeps both bounded by
``pi(delta)``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import StepSizeError
from .model import ModelParams, diffusion_unchecked, drift_unchecked

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class QuadraticMu:
    """``mu(u) = k9 * u**2`` with its inverse."""

    k9: float

    def __call__(self, u):
        return self.k9 * np.square(u)

    def inverse(self, v):
        return np.sqrt(v / self.k9)


@dataclass(frozen=True)
class PowerPi:
    """``pi(delta) = delta**(-exponent)``."""

    exponent: float

    def __call__(self, delta):
        return delta ** (-self.exponent)


@dataclass(frozen=True)
class TruncationRule:
    mu: Callable
    mu_inv: Callable
    pi: Callable
    delta_star: float

    def upper(self, delta: float) -> float:
        return float(self.mu_inv(self.pi(delta)))


@dataclass(frozen=True)
class ClampBounds:
    lower: float
    upper: float
    delta: float

    def clamp(self, x):
        return np.minimum(np.maximum(x, self.lower), self.upper)


def _sup_abs_f_or_g(params: ModelParams, r: float, n: int = 2001) -> float:
    xs = np.geomspace(1.0 / r, r, n)
    return float(np.max(np.maximum(np.abs(drift_unchecked(params, xs)),
                                   diffusion_unchecked(params, xs))))


def default_mu(params: ModelParams, radii=None) -> QuadraticMu:
    """Quadratic dominating map ``k9 u**2`` with ``k9`` the coefficient sum.

    The bound ``sup_{1/r <= x <= r} |f(x)| v g(x) <= mu(r)`` is spot-checked
    on a sample of radii; a ``ValueError`` is raised when it fails, which
    happens for drift exponents above 2 or diffusion exponents above 2.
    """
    mu = QuadraticMu(params.k9)
    if radii is None:
        radii = np.geomspace(1.0 + 1e-6, 1e3, 40)
    for r in radii:
        if _sup_abs_f_or_g(params, float(r)) > mu(float(r)) * (1 + 1e-12):
            raise ValueError(f"k9*u**2 does not dominate |f| v g on [1/r, r] for r={r:g}")
    return mu


def find_delta_star(params: ModelParams, mu_inv: Callable, pi: Callable,
                    cap: float = 0.1, tol: float = 1e-12) -> float:
    """Largest step ``<= cap`` with ``mu_inv(pi(d)) > 1`` and, when the
    floor term is present, ``f > 0`` on ``(0, d)``.

    Both conditions only get harder as ``d`` grows, so bisection applies.
    """

    def ok(d: float) -> bool:
        if not mu_inv(pi(d)) > 1:
            return False
        if params.alpha_m1 > 0:
            xs = np.geomspace(d * 1e-9, d, 512, endpoint=False)
            if np.any(drift_unchecked(params, xs) <= 0):
                return False
        return True

    if ok(cap):
        return cap
    probe = cap
    while not ok(probe):
        probe /= 2
        if probe < 1e-15:
            raise StepSizeError("no admissible step size found below the cap")
    lo, hi = probe, min(2 * probe, cap)
    while hi - lo > tol * hi:
        mid = 0.5 * (lo + hi)
        if ok(mid):
            lo = mid
        else:
            hi = mid
    return lo


def make_rule(params: ModelParams, pi_exponent: float = 2.0 / 3.0,
              mu: QuadraticMu | None = None) -> TruncationRule:
    """Build the rule used by the examples: quadratic ``mu`` and power ``pi``."""
    if pi_exponent <= 0:
        raise ValueError("pi exponent must be positive so that pi decreases to infinity")
    mu = mu or default_mu(params)
    pi = PowerPi(pi_exponent)
    dstar = find_delta_star(params, mu.inverse, pi)
    return TruncationRule(mu=mu, mu_inv=mu.inverse, pi=pi, delta_star=dstar)


def clamp_bounds(rule: TruncationRule, delta: float) -> ClampBounds:
    if not 0 < delta <= rule.delta_star:
        raise StepSizeError(f"step {delta!r} outside (0, delta_star={rule.delta_star!r}]")
    upper = rule.upper(delta)
    if not upper > 1:
        raise StepSizeError(f"mu_inv(pi({delta!r})) = {upper!r} is not > 1")
    return ClampBounds(lower=1.0 / upper, upper=upper, delta=delta)


def truncated_drift_at(params: ModelParams, bounds: ClampBounds, x):
    return drift_unchecked(params, bounds.clamp(x))


def truncated_diffusion_at(params: ModelParams, bounds: ClampBounds, x):
    x = np.asarray(x, dtype=float)
    return np.where(x >= 0, diffusion_unchecked(params, np.clip(x, 0.0, bounds.upper)), 0.0)


def _scalar_or_array(value, like):
    if np.ndim(like) == 0 and not isinstance(like, np.ndarray):
        return float(value)
    return value


def truncated_drift(params: ModelParams, rule: TruncationRule, delta: float, x):
    """Drift evaluated at ``lower v (x ^ upper)``; defined for every real x."""
    return _scalar_or_array(truncated_drift_at(params, clamp_bounds(rule, delta), x), x)


def truncated_diffusion(params: ModelParams, rule: TruncationRule, delta: float, x):
    """``g(x ^ upper)`` for ``x >= 0`` and 0 for negative x."""
    return _scalar_or_array(truncated_diffusion_at(params, clamp_bounds(rule, delta), x), x)


@dataclass
class PiAdmissibilityReport:
    entries: list[tuple[float, float, bool]] = field(default_factory=list)

    @property
    def admissible(self) -> bool:
        return all(ok for _, _, ok in self.entries)

    @property
    def warnings(self) -> list[str]:
        return [
            f"delta={d!r}: delta**(1/4) * pi(delta) = {prod!r} > 1"
            for d, prod, ok in self.entries
            if not ok
        ]


def verify_pi_admissibility(rule: TruncationRule, deltas) -> PiAdmissibilityReport:
    """Check ``delta**(1/4) * pi(delta) <= 1`` for each step.

    Violations are reported and logged, never raised: the power choice
    ``pi = delta**(-2/3)`` used by the worked example violates it for every
    ``delta < 1``.
    """
    report = PiAdmissibilityReport()
    for d in deltas:
        prod = float(d) ** 0.25 * float(rule.pi(d))
        # a few ulps of slack so that pi = delta**(-1/4) counts as the boundary case
        report.entries.append((float(d), prod, prod <= 1.0 + 4 * np.finfo(float).eps))
    for w in report.warnings:
        log.warning("truncation level not admissible: %s", w)
    return report


def khasminskii_constant(params: ModelParams, rule: TruncationRule, delta: float,
                         sigma: float, p: float, xs) -> float:
    """Smallest K with ``x f_d(x) + (p-1)/2 (sigma g_d(x))**2 <= K (1 + x**2)`` on ``xs``."""
    bounds = clamp_bounds(rule, delta)
    xs = np.asarray(xs, dtype=float)
    lhs = xs * truncated_drift_at(params, bounds, xs) + 0.5 * (p - 1) * (
        sigma * truncated_diffusion_at(params, bounds, xs)
    ) ** 2
    return float(np.max(lhs / (1.0 + xs**2)))
