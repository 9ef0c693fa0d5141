"""Reproducible random-stream derivation for parallel replicates.

Every replicate gets an independent stream derived only from the master
seed and the replicate index, so per-replicate output is byte-identical
whether replicates run serially or on any number of threads::

    stream_seed = mix64(master_seed XOR (GOLDEN * (replicate_index + 1)))

where ``mix64`` is the splitmix64 avalanche finalizer
(xor-shift/multiply with constants 0xBF58476D1CE4E5B9 and
0x94D049BB133111EB) and ``GOLDEN`` is the 64-bit golden-ratio constant
0x9E3779B97F4A7C15.
"""

from __future__ import annotations

import numpy as np

_MASK = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15


def mix64(z: int) -> int:
    """splitmix64 finalizer: a full-avalanche 64-bit mixing function."""
    z &= _MASK
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return (z ^ (z >> 31)) & _MASK


def stream_seed(master_seed: int, index: int) -> int:
    """Derive the 64-bit seed of stream ``index`` from ``master_seed``."""
    if index < 0:
        raise ValueError("stream index must be >= 0")
    return mix64((master_seed & _MASK) ^ ((GOLDEN * (index + 1)) & _MASK))


def stream_rng(master_seed: int, index: int) -> np.random.Generator:
    """Independent PCG64 generator for replicate ``index``."""
    return np.random.Generator(np.random.PCG64(stream_seed(master_seed, index)))
