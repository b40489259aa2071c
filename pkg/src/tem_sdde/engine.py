"""Path simulation: truncated, backward and classical Euler-Maruyama.

Paths are advanced in lockstep as rows of a ``(n_paths, M + n_steps + 1)``
state matrix whose column ``j`` holds grid point ``t_k`` with ``k = j - M``.
The first ``M + 1`` columns hold the initial segment, so the delayed state
used at step ``k`` is simply column ``k``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Literal

import numpy as np

from .errors import GridError, ModelDomainError, NoRealRootError, NonFiniteStateError
from .model import (
    SIGMOID,
    InitialSegment,
    ModelParams,
    VolatilityFunction,
    diffusion_unchecked,
    drift_unchecked,
)
from .noise import NoiseStream, ensemble_increments
from .truncation import (
    ClampBounds,
    TruncationRule,
    clamp_bounds,
    truncated_diffusion_at,
    truncated_drift_at,
)

Scheme = Literal["TEM", "BEM", "EM"]
SCHEMES = ("TEM", "BEM", "EM")


@dataclass(frozen=True)
class GridSpec:
    """Uniform grid ``t_k = k * tau / M`` for ``k = -M .. n_steps``."""

    tau: float
    M: int
    n_steps: int

    def __post_init__(self):
        if self.M <= 0 or int(self.M) != self.M:
            raise GridError("M must be a positive integer")
        if self.n_steps < 0 or int(self.n_steps) != self.n_steps:
            raise GridError("n_steps must be a nonnegative integer")
        if not self.tau > 0:
            raise GridError("tau must be positive")

    @classmethod
    def from_horizon(cls, tau: float, M: int, T: float) -> "GridSpec":
        delta = tau / M
        n = round(T / delta)
        if n <= 0 or abs(n * delta - T) > 1e-9 * max(T, delta):
            raise GridError(f"T={T!r} is not a positive multiple of delta={delta!r}")
        return cls(tau=tau, M=M, n_steps=n)

    @property
    def delta(self) -> float:
        return self.tau / self.M

    @property
    def T(self) -> float:
        return self.n_steps * self.delta

    @property
    def times(self) -> np.ndarray:
        return np.arange(-self.M, self.n_steps + 1) * self.delta

    def coarsen(self, factor: int) -> "GridSpec":
        if factor <= 0 or self.M % factor or self.n_steps % factor:
            raise GridError(
                f"grid with M={self.M}, n_steps={self.n_steps} cannot be coarsened by {factor}"
            )
        return GridSpec(tau=self.tau, M=self.M // factor, n_steps=self.n_steps // factor)


@dataclass
class SimPath:
    grid: GridSpec
    states: np.ndarray
    scheme: str
    path_index: int = 0
    dB: np.ndarray | None = None
    dN: np.ndarray | None = None

    @property
    def negativity_count(self) -> int:
        return int(np.count_nonzero(self.states < 0))

    @property
    def nonfinite_count(self) -> int:
        return int(np.count_nonzero(~np.isfinite(self.states)))

    def write_csv(self, path) -> None:
        """Dump ``k,t,x,dB,dN`` rows; increments are blank where undefined."""
        write_path_csv(path, self)


@dataclass
class Ensemble:
    """Paths sharing one grid and scheme, rows ordered by ``path_indices``."""

    grid: GridSpec
    states: np.ndarray
    scheme: str
    path_indices: np.ndarray
    dB: np.ndarray | None = None
    dN: np.ndarray | None = None

    def __len__(self) -> int:
        return self.states.shape[0]

    @property
    def forward(self) -> np.ndarray:
        """States at ``t_0 .. t_n``."""
        return self.states[:, self.grid.M:]

    @property
    def negativity_counts(self) -> np.ndarray:
        return np.count_nonzero(self.states < 0, axis=1)

    @property
    def nonfinite_counts(self) -> np.ndarray:
        return np.count_nonzero(~np.isfinite(self.states), axis=1)

    def path(self, row: int) -> SimPath:
        return SimPath(
            grid=self.grid,
            states=self.states[row],
            scheme=self.scheme,
            path_index=int(self.path_indices[row]),
            dB=None if self.dB is None else self.dB[row],
            dN=None if self.dN is None else self.dN[row],
        )

    def sorted(self) -> "Ensemble":
        order = np.argsort(self.path_indices, kind="stable")
        if np.all(order == np.arange(len(order))):
            return self
        return Ensemble(
            grid=self.grid,
            states=self.states[order],
            scheme=self.scheme,
            path_indices=self.path_indices[order],
            dB=None if self.dB is None else self.dB[order],
            dN=None if self.dN is None else self.dN[order],
        )


def _as_scalar(value, like):
    if np.ndim(like) == 0 and not isinstance(like, np.ndarray):
        return float(value)
    return value


# --- single steps ---------------------------------------------------------


def _tem(params: ModelParams, bounds: ClampBounds, vol: VolatilityFunction, delta: float,
         x, xd, dB, dN):
    jump = np.where(x >= 0, params.alpha_3 * x, 0.0)
    return (
        x
        + truncated_drift_at(params, bounds, x) * delta
        + vol(xd) * truncated_diffusion_at(params, bounds, x) * dB
        + jump * dN
    )


def tem_step(params: ModelParams, rule: TruncationRule, delta: float, x_now, x_delayed,
             dB, dN, vol: VolatilityFunction = SIGMOID):
    """One truncated Euler-Maruyama step.

    ``x + f_d(x) delta + phi(x_delayed) g_d(x) dB + h(x) dN`` with the
    truncated drift and diffusion and the jump coefficient extended by zero
    to negative states.
    """
    x = np.asarray(x_now, dtype=float)
    out = _tem(params, clamp_bounds(rule, delta), vol, delta, x,
               np.asarray(x_delayed, dtype=float), dB, dN)
    if not np.all(np.isfinite(out)):
        raise NonFiniteStateError("truncated step produced a non-finite state; check phi")
    return _as_scalar(out, x_now)


def _check_bem(params: ModelParams, delta: float) -> None:
    if params.alpha_m1 != 0:
        raise ModelDomainError("backward Euler needs alpha_m1 = 0")
    if params.rho != 2:
        raise ModelDomainError("backward Euler needs the quadratic drift, rho = 2")
    if not delta * params.alpha_1 < 1:
        raise ModelDomainError("backward Euler needs delta * alpha_1 < 1")


def _bem(params: ModelParams, vol: VolatilityFunction, delta: float, x, xd, dB, dN):
    c = (
        x
        - params.alpha_0 * delta
        + vol(xd) * diffusion_unchecked(params, np.maximum(x, 0.0)) * dB
        + np.where(x >= 0, params.alpha_3 * x, 0.0) * dN
    )
    a = params.alpha_2 * delta
    b = 1.0 - params.alpha_1 * delta
    disc = b * b + 4.0 * a * c
    if np.any(disc < 0):
        raise NoRealRootError("implicit step has negative discriminant")
    # larger root of a X^2 + b X - c = 0 in the cancellation-free form
    return 2.0 * c / (b + np.sqrt(disc))


def bem_step(params: ModelParams, delta: float, x_now, x_delayed, dB, dN,
             vol: VolatilityFunction = SIGMOID):
    """One backward Euler step, implicit in the quadratic drift.

    Solves ``X = x + (-a0 + a1 X - a2 X^2) delta + phi(x_delayed) g(x) dB
    + h(x) dN`` and returns the root that tends to ``x`` as ``delta -> 0``.
    Only the family without the ``1/x`` term and with ``rho = 2`` is
    supported.
    """
    _check_bem(params, delta)
    x = np.asarray(x_now, dtype=float)
    out = _bem(params, vol, delta, x, np.asarray(x_delayed, dtype=float), dB, dN)
    return _as_scalar(out, x_now)


def _em(params: ModelParams, vol: VolatilityFunction, delta: float, x, xd, dB, dN):
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        f = drift_unchecked(params, x)
        if params.alpha_m1 > 0:
            f = np.where(x > 0, f, np.nan)
        g = diffusion_unchecked(params, np.maximum(x, 0.0))
        return x + f * delta + vol(xd) * g * dB + np.where(x >= 0, params.alpha_3 * x, 0.0) * dN


def em_step(params: ModelParams, delta: float, x_now, x_delayed, dB, dN,
            vol: VolatilityFunction = SIGMOID):
    """Classical Euler-Maruyama step with untruncated coefficients.

    Returns NaN once the state leaves the drift's domain.
    """
    x = np.asarray(x_now, dtype=float)
    out = _em(params, vol, delta, x, np.asarray(x_delayed, dtype=float), dB, dN)
    return _as_scalar(out, x_now)


# --- whole paths ----------------------------------------------------------


def simulate_from_increments(params: ModelParams, rule: TruncationRule | None, grid: GridSpec,
                             initial: InitialSegment, vol: VolatilityFunction,
                             dB: np.ndarray, dN: np.ndarray, scheme: Scheme = "TEM",
                             path_indices=None, keep_noise: bool = False) -> Ensemble:
    """Advance every row of ``dB``/``dN`` over ``grid`` with the given scheme."""
    if abs(grid.tau - params.tau) > 1e-12 * params.tau:
        raise GridError(f"grid tau {grid.tau!r} differs from model tau {params.tau!r}")
    dB = np.atleast_2d(np.asarray(dB, dtype=float))
    dN = np.atleast_2d(np.asarray(dN))
    n_paths, n = dB.shape
    if n != grid.n_steps or dN.shape != dB.shape:
        raise GridError("increment arrays do not match the grid")
    delta, M = grid.delta, grid.M

    if scheme == "TEM":
        if rule is None:
            raise ValueError("the truncated scheme needs a truncation rule")
        bounds = clamp_bounds(rule, delta)

        def step(x, xd, b, j):
            return _tem(params, bounds, vol, delta, x, xd, b, j)
    elif scheme == "BEM":
        _check_bem(params, delta)

        def step(x, xd, b, j):
            return _bem(params, vol, delta, x, xd, b, j)
    elif scheme == "EM":

        def step(x, xd, b, j):
            return _em(params, vol, delta, x, xd, b, j)
    else:
        raise ValueError(f"unknown scheme {scheme!r}; expected one of {SCHEMES}")

    states = np.empty((n_paths, M + n + 1))
    history = np.asarray(initial(np.arange(-M, 1) * delta), dtype=float)
    states[:, : M + 1] = np.broadcast_to(history, (n_paths, M + 1))
    for k in range(n):
        try:
            states[:, M + k + 1] = step(states[:, M + k], states[:, k], dB[:, k], dN[:, k])
        except NoRealRootError as exc:
            raise NoRealRootError(str(exc), step=k) from None

    if scheme == "TEM":
        bad = ~np.isfinite(states)
        if bad.any():
            first = int(np.argmax(bad.any(axis=0))) - M - 1
            raise NonFiniteStateError("truncated step produced a non-finite state", step=first)

    if path_indices is None:
        path_indices = np.arange(n_paths)
    return Ensemble(
        grid=grid,
        states=states,
        scheme=scheme,
        path_indices=np.asarray(path_indices, dtype=np.int64),
        dB=dB if keep_noise else None,
        dN=dN if keep_noise else None,
    )


def simulate_path(params: ModelParams, rule: TruncationRule | None, grid: GridSpec,
                  initial: InitialSegment, vol: VolatilityFunction, noise: NoiseStream,
                  scheme: Scheme = "TEM") -> SimPath:
    dB = noise.brownian(grid.n_steps, grid.delta)
    dN = noise.poisson(grid.n_steps, params.lam, grid.delta)
    ens = simulate_from_increments(params, rule, grid, initial, vol, dB[None], dN[None],
                                   scheme, path_indices=[noise.path_index], keep_noise=True)
    return ens.path(0)


def simulate_ensemble(params: ModelParams, rule: TruncationRule | None, grid: GridSpec,
                      initial: InitialSegment, vol: VolatilityFunction, master_seed: int,
                      path_indices, scheme: Scheme = "TEM",
                      keep_noise: bool = False) -> Ensemble:
    path_indices = np.asarray(list(path_indices), dtype=np.int64)
    dB, dN = ensemble_increments(master_seed, path_indices, grid.n_steps, grid.delta, params.lam)
    return simulate_from_increments(params, rule, grid, initial, vol, dB, dN, scheme,
                                    path_indices=path_indices, keep_noise=keep_noise)


def aggregate_increments(dB: np.ndarray, dN: np.ndarray, factor: int):
    """Sum consecutive blocks of ``factor`` fine increments along the last axis."""
    dB = np.asarray(dB)
    dN = np.asarray(dN)
    n = dB.shape[-1]
    if factor <= 0 or n % factor:
        raise GridError(f"{n} fine steps cannot be grouped in blocks of {factor}")
    shape = dB.shape[:-1] + (n // factor, factor)
    return dB.reshape(shape).sum(axis=-1), dN.reshape(shape).sum(axis=-1)


def coupled_paths(params: ModelParams, rule: TruncationRule | None, grid_fine: GridSpec,
                  refinement: int, initial: InitialSegment, vol: VolatilityFunction,
                  master_seed: int, path_indices, scheme: Scheme = "TEM",
                  coarse_scheme: Scheme | None = None) -> tuple[Ensemble, Ensemble]:
    """Fine and coarse ensembles driven by the same Brownian and Poisson paths.

    The coarse step is ``2**refinement`` fine steps; its increments are the
    sums of the fine increments it spans.
    """
    if refinement < 0:
        raise GridError("refinement must be >= 0")
    factor = 2**refinement
    grid_coarse = grid_fine.coarsen(factor)
    fine = simulate_ensemble(params, rule, grid_fine, initial, vol, master_seed, path_indices,
                             scheme, keep_noise=True)
    cB, cN = aggregate_increments(fine.dB, fine.dN, factor)
    coarse = simulate_from_increments(params, rule, grid_coarse, initial, vol, cB, cN,
                                      coarse_scheme or scheme, path_indices=fine.path_indices,
                                      keep_noise=True)
    return fine, coarse


def format_number(value) -> str:
    """Shortest round-trip decimal text; integers stay integral."""
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    v = float(value)
    if math.isnan(v):
        return "nan"
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return repr(v)


def write_path_csv(path, sim: SimPath) -> None:
    grid = sim.grid
    rows = []
    for j, x in enumerate(sim.states):
        k = j - grid.M
        inc = 0 <= k < grid.n_steps and sim.dB is not None
        rows.append([
            str(k),
            format_number(k * grid.delta),
            format_number(x),
            format_number(sim.dB[k]) if inc else "",
            format_number(int(sim.dN[k])) if inc else "",
        ])
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["k", "t", "x", "dB", "dN"])
        writer.writerows(rows)
