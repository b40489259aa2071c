"""Reproducible per-path driving noise.

Every path owns two independent substreams, one for Brownian increments and
one for Poisson counts.  Both are keyed on ``(master_seed, path_index,
stream)`` through ``numpy.random.SeedSequence`` spawn keys and drawn from a
counter-based Philox generator, so the increments of a path never depend on
which other paths are generated, in what order, or on how many workers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

_BROWNIAN = 0
_POISSON = 1

# inversion is used only in this regime
MAX_POISSON_MEAN = 10.0


def _generator(master_seed: int, path_index: int, stream: int) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=int(master_seed), spawn_key=(int(path_index), stream))
    return np.random.Generator(np.random.Philox(ss))


def poisson_inversion(u: np.ndarray, mean: float) -> np.ndarray:
    """Poisson(mean) variates from uniforms by sequential CDF inversion."""
    if not 0 <= mean <= MAX_POISSON_MEAN:
        raise ValueError(f"Poisson mean {mean!r} outside [0, {MAX_POISSON_MEAN}]")
    u = np.asarray(u, dtype=float)
    counts = np.zeros(u.shape, dtype=np.int64)
    if mean == 0:
        return counts
    p = math.exp(-mean)
    cdf = p
    j = 0
    cap = int(mean + 40 * math.sqrt(mean) + 60)
    while j < cap:
        above = u > cdf
        if not above.any():
            break
        counts += above
        j += 1
        p *= mean / j
        cdf += p
    return counts


@dataclass(frozen=True)
class NoiseStream:
    """Driving increments of one path."""

    master_seed: int
    path_index: int

    def standard_normals(self, n: int) -> np.ndarray:
        return _generator(self.master_seed, self.path_index, _BROWNIAN).standard_normal(n)

    def uniforms(self, n: int) -> np.ndarray:
        return _generator(self.master_seed, self.path_index, _POISSON).random(n)

    def brownian(self, n: int, delta: float) -> np.ndarray:
        """``n`` increments ``B(t_{k+1}) - B(t_k)`` over steps of length ``delta``."""
        return math.sqrt(delta) * self.standard_normals(n)

    def poisson(self, n: int, lam: float, delta: float) -> np.ndarray:
        """``n`` increments ``N(t_{k+1}) - N(t_k)`` for intensity ``lam``."""
        return poisson_inversion(self.uniforms(n), lam * delta)


def ensemble_increments(master_seed: int, path_indices, n_steps: int, delta: float,
                        lam: float) -> tuple[np.ndarray, np.ndarray]:
    """Stack the increments of several paths into ``(n_paths, n_steps)`` arrays."""
    path_indices = list(path_indices)
    dB = np.empty((len(path_indices), n_steps))
    dN = np.empty((len(path_indices), n_steps), dtype=np.int64)
    for row, i in enumerate(path_indices):
        stream = NoiseStream(master_seed, i)
        dB[row] = stream.brownian(n_steps, delta)
        dN[row] = stream.poisson(n_steps, lam, delta)
    return dB, dN
