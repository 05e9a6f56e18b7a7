"""Counter-derived random streams.

Every consumer asks for ``stream(seed, purpose, index, ...)``; the same key
always yields the same generator regardless of call order, so per-sample
work can be reordered or parallelized without changing results.
"""

from __future__ import annotations

import zlib

import numpy as np


def _word(key) -> int:
    if isinstance(key, str):
        return zlib.crc32(key.encode("utf-8"))
    key = int(key)
    if key < 0:
        raise ValueError(f"stream keys must be non-negative, got {key}")
    return key


def stream(seed: int, *keys) -> np.random.Generator:
    """Independent generator for ``(seed, *keys)``; string keys are hashed."""
    ss = np.random.SeedSequence(entropy=int(seed) & (2**64 - 1),
                                spawn_key=tuple(_word(k) for k in keys))
    return np.random.Generator(np.random.PCG64(ss))
