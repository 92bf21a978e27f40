"""Seeded random streams.

Every consumer asks for a named stream.  The stream's seed is the user seed
XOR a stable 64-bit hash of the stream name, so adding a consumer never
shifts the numbers another one sees::

    gen = stream(seed, "operator-models")
"""

from __future__ import annotations

import hashlib

import numpy as np

_MASK64 = (1 << 64) - 1


def stream_id(name: str) -> int:
    return int.from_bytes(hashlib.sha256(name.encode("utf-8")).digest()[:8], "little")


def stream(seed: int, name: str) -> np.random.Generator:
    key = (int(seed) & _MASK64) ^ stream_id(name)
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(key)))
