"""Seeded random streams.

Every generator in the package is ``numpy.random.Generator`` over the PCG64
bit generator (128-bit state, 64-bit output), whose output is identical on
every platform numpy supports. Components never share a stream: each one asks
for a named child of the run seed, so adding draws in one component leaves
the others untouched.
"""

import zlib

import numpy as np


def _key(name):
    return zlib.crc32(name.encode("utf-8"))


def stream(seed, *names):
    """Return a generator for ``seed`` and an optional path of stream names."""
    entropy = [int(seed) & 0xFFFFFFFFFFFFFFFF]
    ss = np.random.SeedSequence(entropy, spawn_key=tuple(_key(n) for n in names))
    return np.random.Generator(np.random.PCG64(ss))


def child_seed(seed, *names):
    """Derive an integer seed for a named sub-component."""
    return int(stream(seed, *names).integers(0, 2**63 - 1))
