"""Chunked, optionally parallel Monte Carlo pipelines.

Paths are cut into fixed-size chunks of consecutive path indices.  Each
chunk is simulated independently (its noise depends only on the master seed
and the path indices) and the per-chunk results are combined in chunk order,
so the worker count never changes a single output bit.
"""

from __future__ import annotations

import multiprocessing
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .analysis import (
    ConvergenceReport,
    MomentAccumulator,
    compare_schemes,
    fit_convergence_order,
    strong_error_from_sups,
    sup_differences,
)
from .engine import (
    Ensemble,
    GridSpec,
    aggregate_increments,
    simulate_ensemble,
    simulate_from_increments,
)
from .errors import GridError
from .model import InitialSegment, ModelParams, VolatilityFunction
from .pricing import (
    BarrierOptionSpec,
    BondSpec,
    PriceEstimate,
    barrier_payoffs,
    bond_payoffs,
    summarize,
)
from .truncation import TruncationRule


@dataclass(frozen=True)
class Setup:
    params: ModelParams
    rule: TruncationRule | None
    vol: VolatilityFunction
    initial: InitialSegment
    seed: int


def chunk_ranges(n_paths: int, chunk_size: int) -> list[range]:
    if n_paths <= 0:
        raise ValueError("n_paths must be positive")
    if chunk_size <= 0:
        raise ValueError("chunk_size must be positive")
    return [range(s, min(s + chunk_size, n_paths)) for s in range(0, n_paths, chunk_size)]


def map_chunks(fn, arg_tuples, workers: int = 1) -> list:
    """Apply ``fn`` to each argument tuple; results come back in input order."""
    arg_tuples = list(arg_tuples)
    if workers <= 1 or len(arg_tuples) <= 1:
        return [fn(*a) for a in arg_tuples]
    ctx = multiprocessing.get_context("fork")
    with ProcessPoolExecutor(max_workers=workers, mp_context=ctx) as pool:
        futures = [pool.submit(fn, *a) for a in arg_tuples]
        return [f.result() for f in futures]


def _power_of_two(n: int) -> bool:
    return n >= 1 and n & (n - 1) == 0


def check_ladder(ladder, M_ref: int) -> list[int]:
    """Validate steps-per-delay rungs against the reference; return them sorted coarse first."""
    rungs = sorted(set(int(m) for m in ladder))
    if len(rungs) != len(list(ladder)):
        raise GridError("ladder has repeated rungs")
    for m in rungs:
        if m <= 0 or M_ref % m or not _power_of_two(M_ref // m):
            raise GridError(f"rung M={m} is not a power-of-two divisor of the reference M={M_ref}")
    return rungs


def _fine_ensemble(setup: Setup, grid: GridSpec, paths, scheme: str) -> Ensemble:
    return simulate_ensemble(setup.params, setup.rule, grid, setup.initial, setup.vol,
                             setup.seed, paths, scheme, keep_noise=True)


def _coarse_from(setup: Setup, fine: Ensemble, M: int, scheme: str) -> Ensemble:
    factor = fine.grid.M // M
    if factor == 1:
        return fine
    cB, cN = aggregate_increments(fine.dB, fine.dN, factor)
    return simulate_from_increments(setup.params, setup.rule, fine.grid.coarsen(factor),
                                    setup.initial, setup.vol, cB, cN, scheme,
                                    path_indices=fine.path_indices)


# --- convergence --------------------------------------------------------------


def _convergence_chunk(setup, grid_ref, rungs, paths, scheme):
    fine = _fine_ensemble(setup, grid_ref, paths, scheme)
    return {m: sup_differences(fine, _coarse_from(setup, fine, m, scheme)) for m in rungs}


def run_convergence(setup: Setup, ladder, M_ref: int, T: float, n_paths: int, p: float = 2,
                    scheme: str = "TEM", chunk_size: int = 256,
                    workers: int = 1) -> ConvergenceReport:
    """Strong error of each rung against a coupled fine reference, plus the fitted order."""
    rungs = check_ladder(ladder, M_ref)
    if len(rungs) < 3:
        raise GridError("a convergence ladder needs at least 3 rungs")
    if M_ref in rungs:
        raise GridError("the reference must be finer than every rung")
    grid_ref = GridSpec.from_horizon(setup.params.tau, M_ref, T)
    for m in rungs:
        grid_ref.coarsen(M_ref // m)
    parts = map_chunks(_convergence_chunk,
                       [(setup, grid_ref, rungs, c, scheme) for c in chunk_ranges(n_paths, chunk_size)],
                       workers)
    points = [
        strong_error_from_sups(setup.params.tau / m, np.concatenate([part[m] for part in parts]), p)
        for m in rungs
    ]
    return fit_convergence_order(points, p=p)


# --- moments ------------------------------------------------------------------


def _moments_chunk(setup, grid, paths, orders, inverse, scheme):
    ens = simulate_ensemble(setup.params, setup.rule, grid, setup.initial, setup.vol,
                            setup.seed, paths, scheme)
    accs = []
    for p in orders:
        acc = MomentAccumulator(p=p, inverse=inverse)
        acc.add(ens)
        accs.append(acc)
    return accs, int(np.count_nonzero(ens.nonfinite_counts))


def merge_accumulators(parts) -> MomentAccumulator:
    first = parts[0]
    out = MomentAccumulator(p=first.p, inverse=first.inverse, times=first.times,
                            total=np.zeros_like(first.total), total_sq=np.zeros_like(first.total))
    for acc in parts:
        out.total += acc.total
        out.total_sq += acc.total_sq
        out.n += acc.n
        out.excluded += acc.excluded
    return out


@dataclass
class MomentRun:
    accumulators: dict
    nonfinite_paths: int


def run_moments(setup: Setup, grid: GridSpec, n_paths: int, orders=(2, 4), inverse: bool = False,
                scheme: str = "TEM", chunk_size: int = 256, workers: int = 1) -> MomentRun:
    parts = map_chunks(_moments_chunk,
                       [(setup, grid, c, tuple(orders), inverse, scheme)
                        for c in chunk_ranges(n_paths, chunk_size)],
                       workers)
    accs = {p: merge_accumulators([part[0][i] for part in parts]) for i, p in enumerate(orders)}
    return MomentRun(accumulators=accs, nonfinite_paths=sum(part[1] for part in parts))


# --- pricing ------------------------------------------------------------------


def _pricing_chunk(setup, grid_fine, rungs, paths, bond, barrier, scheme):
    fine = _fine_ensemble(setup, grid_fine, paths, scheme)
    out = {}
    for m in rungs:
        ens = _coarse_from(setup, fine, m, scheme)
        out[m] = (
            None if bond is None else bond_payoffs(ens, bond),
            None if barrier is None else barrier_payoffs(ens, barrier),
        )
    return out


@dataclass
class PricingRun:
    rows: list  # (instrument, M, PriceEstimate)
    successive_gaps: dict  # instrument -> list of |P(M_i) - P(M_{i+1})|


def run_pricing(setup: Setup, ladder, T: float, n_paths: int, bond: BondSpec | None = None,
                barrier: BarrierOptionSpec | None = None, scheme: str = "TEM",
                chunk_size: int = 256, workers: int = 1) -> PricingRun:
    """Price each instrument at every rung, all rungs coupled to the finest one."""
    if bond is None and barrier is None:
        raise ValueError("nothing to price")
    M_fine = max(int(m) for m in ladder)
    rungs = check_ladder(ladder, M_fine)
    grid_fine = GridSpec.from_horizon(setup.params.tau, M_fine, T)
    for m in rungs:
        grid_fine.coarsen(M_fine // m)
    parts = map_chunks(_pricing_chunk,
                       [(setup, grid_fine, rungs, c, bond, barrier, scheme)
                        for c in chunk_ranges(n_paths, chunk_size)],
                       workers)
    rows, gaps = [], {}
    for slot, name in ((0, "bond"), (1, "barrier")):
        if (bond, barrier)[slot] is None:
            continue
        estimates: list[PriceEstimate] = []
        for m in rungs:
            payoffs = np.concatenate([part[m][slot] for part in parts])
            est = summarize(payoffs, setup.params.tau / m)
            estimates.append(est)
            rows.append((name, m, est))
        gaps[name] = [abs(a.value - b.value) for a, b in zip(estimates, estimates[1:])]
    return PricingRun(rows=rows, successive_gaps=gaps)


# --- scheme comparison --------------------------------------------------------


def _comparison_chunk(setup_a, setup_b, grid, paths, scheme_a, scheme_b):
    a = simulate_ensemble(setup_a.params, setup_a.rule, grid, setup_a.initial, setup_a.vol,
                          setup_a.seed, paths, scheme_a)
    b = simulate_ensemble(setup_b.params, setup_b.rule, grid, setup_b.initial, setup_b.vol,
                          setup_b.seed, paths, scheme_b)
    return compare_schemes(a, b).sups


def run_comparison(setup: Setup, grid: GridSpec, n_paths: int, scheme_a: str = "TEM",
                   scheme_b: str = "BEM", chunk_size: int = 256, workers: int = 1) -> np.ndarray:
    """Per-path sup gaps between two schemes driven by the same noise."""
    parts = map_chunks(_comparison_chunk,
                       [(setup, setup, grid, c, scheme_a, scheme_b)
                        for c in chunk_ranges(n_paths, chunk_size)],
                       workers)
    return np.concatenate(parts)

