"""Labelled random streams derived from a single integer seed.

Every consumer asks for ``stream(seed, purpose, index)``; the triple is
hashed into a :class:`numpy.random.SeedSequence` so that adding a new
consumer never shifts the draws of an existing one.  The bit generator is
numpy's PCG64.
"""

from __future__ import annotations

import zlib

import numpy as np


def _purpose_key(purpose: str) -> int:
    return zlib.crc32(purpose.encode("utf-8"))


def stream(seed: int, purpose: str, *index: int) -> np.random.Generator:
    entropy = [int(seed) & 0xFFFFFFFFFFFFFFFF, _purpose_key(purpose), *(int(i) for i in index)]
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))


def derive_seed(seed: int, purpose: str, *index: int) -> int:
    """A plain integer seed for APIs that take one."""
    return int(stream(seed, purpose, *index).integers(0, 2**63 - 1))
