"""Baseline initial designs on the unit cube: uniform, Latin hypercube, Halton.

Uniform and Latin batches draw from a PCG64 generator seeded with ``seed``
(see :mod:`warmbho.rng`), so a given ``(d, k, seed)`` reproduces bit for bit.
Halton is deterministic and unscrambled.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import rng as _rng
from .errors import DomainError, UnsupportedDimensionError

PRIMES = (
    2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41,
    43, 47, 53, 59, 61, 67, 71, 73, 79, 83, 89, 97,
)
METHODS = ("uniform", "latin", "halton")


@dataclass(frozen=True)
class SampleBatch:
    points: np.ndarray
    seed: int
    method: str

    def __len__(self):
        return len(self.points)


def _check(d, k):
    if d < 1 or k < 1:
        raise DomainError(f"need d >= 1 and k >= 1, got d={d}, k={k}")


def uniform_sample(d: int, k: int, seed: int) -> SampleBatch:
    _check(d, k)
    gen = _rng.stream(seed, "uniform")
    return SampleBatch(gen.random((k, d)), seed, "uniform")


def latin_hypercube(d: int, k: int, seed: int) -> SampleBatch:
    """One point per stratum ``[j/k, (j+1)/k)`` in every dimension."""
    _check(d, k)
    gen = _rng.stream(seed, "latin")
    strata = np.stack([gen.permutation(k) for _ in range(d)], axis=1)
    offsets = gen.random((k, d))
    points = (strata + offsets) / k
    # guard against (k-1 + 1.0-eps)/k rounding up to 1.0
    points = np.minimum(points, np.nextafter((strata + 1) / k, 0.0))
    return SampleBatch(points, seed, "latin")


def radical_inverse(index: int, base: int) -> float:
    """Van der Corput radical inverse of a non-negative integer."""
    result = 0.0
    f = 1.0 / base
    i = index
    while i > 0:
        i, digit = divmod(i, base)
        result += digit * f
        f /= base
    return result


def halton(d: int, k: int, start_index: int = 1) -> SampleBatch:
    """Halton points ``start_index .. start_index + k - 1`` in the first ``d`` prime bases."""
    _check(d, k)
    if d > len(PRIMES):
        raise UnsupportedDimensionError(f"Halton supports at most {len(PRIMES)} dimensions, got {d}")
    if start_index < 1:
        raise DomainError("start_index must be >= 1")
    indices = np.arange(start_index, start_index + k, dtype=np.int64)
    points = np.empty((k, d))
    for i in range(d):
        base = PRIMES[i]
        rest = indices.copy()
        col = np.zeros(k)
        f = 1.0 / base
        while np.any(rest):
            rest, digit = np.divmod(rest, base)
            col += digit * f
            f /= base
        points[:, i] = col
    return SampleBatch(points, 0, "halton")


def sample(method: str, d: int, k: int, seed: int = 0) -> SampleBatch:
    if method == "uniform":
        return uniform_sample(d, k, seed)
    if method == "latin":
        return latin_hypercube(d, k, seed)
    if method == "halton":
        return halton(d, k, 1)
    raise ValueError(f"unknown sampling method {method!r}; expected one of {METHODS}")
