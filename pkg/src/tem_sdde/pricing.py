"""Monte Carlo prices of a zero-coupon bond and an up-and-out barrier call.

Both payoffs read the simulated short rate as the piecewise-constant step
process through the grid states, so the discount integral is an exact
left-endpoint sum and the running maximum is the grid maximum.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .analysis import Z95
from .engine import Ensemble, format_number
from .errors import HorizonError


@dataclass(frozen=True)
class BondSpec:
    maturity: float

    def __post_init__(self):
        if not self.maturity > 0:
            raise ValueError("bond maturity must be positive")


@dataclass(frozen=True)
class BarrierOptionSpec:
    """Up-and-out call; ``barrier=None`` removes the knock-out."""

    expiry: float
    strike: float
    barrier: float | None = None

    def __post_init__(self):
        if not self.expiry > 0:
            raise ValueError("expiry must be positive")
        if not self.strike >= 0:
            raise ValueError("strike must be nonnegative")
        if self.barrier is not None and not self.barrier > 0:
            raise ValueError("barrier must be positive")


@dataclass(frozen=True)
class PriceEstimate:
    value: float
    ci_halfwidth: float
    n_paths: int
    delta_used: float

    @property
    def ci_lo(self) -> float:
        return self.value - self.ci_halfwidth

    @property
    def ci_hi(self) -> float:
        return self.value + self.ci_halfwidth


def _steps_to(ens: Ensemble, horizon: float) -> int:
    delta = ens.grid.delta
    n = round(horizon / delta)
    if abs(n * delta - horizon) > 1e-9 * max(horizon, delta):
        raise HorizonError(f"horizon {horizon!r} is not a multiple of delta={delta!r}")
    if n > ens.grid.n_steps:
        raise HorizonError(f"horizon {horizon!r} exceeds simulated horizon {ens.grid.T!r}")
    return n


def bond_payoffs(ens: Ensemble, spec: BondSpec) -> np.ndarray:
    """Per-path ``exp(-delta * sum_{k<n} X(t_k))``, rows in path-index order."""
    ens = ens.sorted()
    n = _steps_to(ens, spec.maturity)
    return np.exp(-ens.grid.delta * ens.forward[:, :n].sum(axis=1))


def barrier_payoffs(ens: Ensemble, spec: BarrierOptionSpec) -> np.ndarray:
    ens = ens.sorted()
    n = _steps_to(ens, spec.expiry)
    x = ens.forward[:, : n + 1]
    payoff = np.maximum(x[:, -1] - spec.strike, 0.0)
    if spec.barrier is not None:
        payoff = np.where(x.max(axis=1) < spec.barrier, payoff, 0.0)
    return payoff


def summarize(payoffs: np.ndarray, delta: float) -> PriceEstimate:
    payoffs = np.asarray(payoffs, dtype=float)
    n = payoffs.size
    half = Z95 * float(payoffs.std(ddof=1)) / math.sqrt(n) if n > 1 else 0.0
    return PriceEstimate(value=float(payoffs.mean()), ci_halfwidth=half, n_paths=n,
                         delta_used=float(delta))


def price_bond(ens: Ensemble, spec: BondSpec) -> PriceEstimate:
    return summarize(bond_payoffs(ens, spec), ens.grid.delta)


def price_barrier(ens: Ensemble, spec: BarrierOptionSpec) -> PriceEstimate:
    """Undiscounted ``E[(X(T) - strike)^+ ; max_k X(t_k) < barrier]``."""
    return summarize(barrier_payoffs(ens, spec), ens.grid.delta)


def write_price_csv(path, rows) -> None:
    """``rows`` are ``(instrument, PriceEstimate)`` pairs."""
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["instrument", "delta", "n_paths", "value", "ci_lo", "ci_hi"])
        for name, est in rows:
            writer.writerow([name] + [format_number(v) for v in (
                est.delta_used, est.n_paths, est.value, est.ci_lo, est.ci_hi)])
