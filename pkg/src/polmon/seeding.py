"""Deterministic RNG streams from structured keys.

Every random draw in the package goes through ``rng_for``; the key tuple
(ints and short strings) fully determines the stream, so datasets, training
runs, and reports are bit-reproducible.
"""

from __future__ import annotations

import zlib

import numpy as np


def _key_int(part) -> int:
    if isinstance(part, (int, np.integer)):
        return int(part) & 0xFFFFFFFF
    if isinstance(part, str):
        return zlib.crc32(part.encode("utf-8"))
    raise TypeError(f"rng key parts must be int or str, got {type(part)!r}")


def rng_for(*key) -> np.random.Generator:
    ints = tuple(_key_int(p) for p in key)
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(ints)))
