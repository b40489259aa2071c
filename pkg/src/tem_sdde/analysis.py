"""Monte Carlo estimators: moments, strong errors, convergence order, scheme gaps.

All reductions run over rows sorted by path index so that results do not
depend on the order in which paths were generated.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .engine import Ensemble, format_number
from .errors import DegenerateFitError, GridError, InsufficientSampleError

Z95 = 1.959963984540054
MIN_PATHS = 100
MAX_ERROR_ORDER = 8


@dataclass
class MomentReport:
    p: float
    times: np.ndarray
    estimates: np.ndarray
    ci_halfwidth: np.ndarray
    n_paths: int
    inverse: bool = False
    excluded: int = 0

    @property
    def sup_estimate(self) -> float:
        return float(np.max(self.estimates))

    @property
    def excluded_fraction(self) -> float:
        total = self.n_paths + self.excluded
        return self.excluded / total if total else 0.0

    def write_csv(self, path) -> None:
        rows = zip(self.times, self.estimates, self.ci_halfwidth)
        _write_csv(path, ["t", "estimate", "ci_halfwidth"], rows)


@dataclass
class MomentAccumulator:
    """Running per-time sums of ``|x|**p`` (or ``|1/x|**p``) over path chunks.

    Chunks must be added in path-index order for bit-stable results.
    """

    p: float
    inverse: bool = False
    times: np.ndarray | None = None
    total: np.ndarray | None = None
    total_sq: np.ndarray | None = None
    n: int = 0
    excluded: int = 0

    def add(self, ens: Ensemble) -> None:
        ens = ens.sorted()
        x = ens.forward
        if self.inverse:
            usable = np.all(x > 0, axis=1)
            self.excluded += int(np.count_nonzero(~usable))
            x = x[usable]
            v = np.abs(1.0 / x) ** self.p
        else:
            v = np.abs(x) ** self.p
        if self.total is None:
            self.times = np.arange(x.shape[1]) * ens.grid.delta
            self.total = np.zeros(x.shape[1])
            self.total_sq = np.zeros(x.shape[1])
        elif x.shape[1] != self.total.shape[0]:
            raise GridError("chunks on different grids")
        self.total += v.sum(axis=0)
        self.total_sq += (v * v).sum(axis=0)
        self.n += x.shape[0]

    def report(self, min_paths: int = MIN_PATHS) -> MomentReport:
        if self.n < min_paths:
            raise InsufficientSampleError(f"{self.n} usable paths, need at least {min_paths}")
        mean = self.total / self.n
        var = np.maximum(self.total_sq / self.n - mean * mean, 0.0) * self.n / max(self.n - 1, 1)
        return MomentReport(
            p=self.p,
            times=self.times,
            estimates=mean,
            ci_halfwidth=Z95 * np.sqrt(var / self.n),
            n_paths=self.n,
            inverse=self.inverse,
            excluded=self.excluded,
        )


def estimate_moments(paths: Ensemble, p: float, inverse: bool = False,
                     rho: float | None = None, min_paths: int = MIN_PATHS) -> MomentReport:
    """Per-time estimates of ``E|x(t_k)|**p`` on ``t_0 .. t_n``.

    In inverse mode ``E|1/x(t_k)|**p`` is estimated from the paths that stay
    strictly positive; the others are counted in ``excluded``.
    """
    if p < 2:
        raise ValueError("moment order must be >= 2")
    if inverse and rho is not None and not p > max(2.0, rho - 1):
        raise ValueError("inverse moments need p > 2 v (rho - 1)")
    acc = MomentAccumulator(p=p, inverse=inverse)
    acc.add(paths)
    return acc.report(min_paths)


# --- strong error -----------------------------------------------------------


@dataclass(frozen=True)
class ErrorPoint:
    delta: float
    error: float
    ci_lo: float
    ci_hi: float
    n_paths: int


def sup_differences(fine: Ensemble, coarse: Ensemble) -> np.ndarray:
    """Per-path ``max_k |x_coarse(t_k) - x_fine(t_k)|`` over coarse grid points ``t_k >= 0``."""
    if fine.grid.tau != coarse.grid.tau or fine.grid.T != coarse.grid.T:
        raise GridError("fine and coarse ensembles cover different horizons")
    ratio, rem = divmod(fine.grid.M, coarse.grid.M)
    if rem or fine.grid.n_steps != ratio * coarse.grid.n_steps:
        raise GridError("coarse grid is not a subgrid of the fine grid")
    if not np.array_equal(fine.path_indices, coarse.path_indices):
        raise GridError("ensembles are not coupled path by path")
    fine, coarse = fine.sorted(), coarse.sorted()
    return np.max(np.abs(coarse.forward - fine.forward[:, ::ratio]), axis=1)


def strong_error_from_sups(delta: float, sups: np.ndarray, p: float) -> ErrorPoint:
    """``(E sup|.|**p)**(1/p)`` with a normal-approximation interval mapped through the root."""
    if not 2 <= p <= MAX_ERROR_ORDER:
        raise ValueError(f"error order must lie in [2, {MAX_ERROR_ORDER}]")
    v = np.asarray(sups, dtype=float) ** p
    n = v.size
    m = float(v.mean())
    half = Z95 * float(v.std(ddof=1)) / np.sqrt(n) if n > 1 else 0.0
    return ErrorPoint(
        delta=float(delta),
        error=m ** (1.0 / p),
        ci_lo=max(m - half, 0.0) ** (1.0 / p),
        ci_hi=(m + half) ** (1.0 / p),
        n_paths=n,
    )


def estimate_strong_error(fine: Ensemble, coarse: Ensemble, p: float = 2) -> ErrorPoint:
    return strong_error_from_sups(coarse.grid.delta, sup_differences(fine, coarse), p)


@dataclass
class ConvergenceReport:
    deltas: np.ndarray
    errors: np.ndarray
    ci_lo: np.ndarray
    ci_hi: np.ndarray
    slope: float
    intercept: float
    residuals: np.ndarray
    p: float = 2

    @property
    def strictly_decreasing(self) -> bool:
        return bool(np.all(np.diff(self.errors) < 0))

    def write_csv(self, path) -> None:
        rows = zip(self.deltas, self.errors, self.ci_lo, self.ci_hi)
        _write_csv(path, ["delta", "error", "ci_lo", "ci_hi"], rows)


def fit_convergence_order(points, p: float = 2) -> ConvergenceReport:
    """Least-squares slope of ``log error`` against ``log delta``.

    ``points`` holds ``ErrorPoint`` objects or ``(delta, error)`` pairs.  The
    report lists them from the largest step down.
    """
    pts = [pt if isinstance(pt, ErrorPoint) else ErrorPoint(float(pt[0]), float(pt[1]),
                                                           float(pt[1]), float(pt[1]), 0)
           for pt in points]
    if len(pts) < 3:
        raise DegenerateFitError("need at least 3 points")
    pts.sort(key=lambda e: -e.delta)
    d = np.array([e.delta for e in pts])
    err = np.array([e.error for e in pts])
    if np.any(d <= 0) or len(set(d)) != len(d):
        raise DegenerateFitError("step sizes must be positive and distinct")
    if np.any(~(err > 0)):
        raise DegenerateFitError("errors must be positive; drop exact zeros before fitting")
    lx, ly = np.log(d), np.log(err)
    A = np.vstack([lx, np.ones_like(lx)]).T
    (slope, intercept), *_ = np.linalg.lstsq(A, ly, rcond=None)
    return ConvergenceReport(
        deltas=d,
        errors=err,
        ci_lo=np.array([e.ci_lo for e in pts]),
        ci_hi=np.array([e.ci_hi for e in pts]),
        slope=float(slope),
        intercept=float(intercept),
        residuals=ly - (slope * lx + intercept),
        p=p,
    )


# --- scheme comparison ------------------------------------------------------


@dataclass
class SchemeComparison:
    mean_t: np.ndarray
    rms_t: np.ndarray
    max_t: np.ndarray
    mean: float
    rms: float
    max: float
    mean_sup: float
    sups: np.ndarray = field(repr=False, default=None)


def compare_schemes(a: Ensemble, b: Ensemble) -> SchemeComparison:
    """Pathwise gaps ``|x_a(t_k) - x_b(t_k)|`` between two ensembles on shared noise."""
    if a.grid != b.grid:
        raise GridError("ensembles live on different grids")
    a, b = a.sorted(), b.sorted()
    if not np.array_equal(a.path_indices, b.path_indices):
        raise GridError("ensembles were driven by different paths")
    diff = np.abs(a.forward - b.forward)
    sups = diff.max(axis=1)
    return SchemeComparison(
        mean_t=diff.mean(axis=0),
        rms_t=np.sqrt((diff**2).mean(axis=0)),
        max_t=diff.max(axis=0),
        mean=float(diff.mean()),
        rms=float(np.sqrt((diff**2).mean())),
        max=float(diff.max()),
        mean_sup=float(sups.mean()),
        sups=sups,
    )


def _write_csv(path, header, rows) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([format_number(v) for v in row])
