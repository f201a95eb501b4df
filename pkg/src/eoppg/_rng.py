"""Seeded substreams.

Every random quantity in the package is drawn from a generator keyed by a
tuple of non-negative integers (and short strings, hashed stably), so a
result depends only on its key and never on scheduling order.
"""

from __future__ import annotations

import zlib

import numpy as np


def _as_int(key) -> int:
    if isinstance(key, (int, np.integer)):
        if key < 0:
            raise ValueError(f"seed keys must be non-negative, got {key}")
        return int(key)
    if isinstance(key, str):
        return zlib.crc32(key.encode("utf-8"))
    raise TypeError(f"unsupported seed key {key!r}")


def substream(*keys) -> np.random.Generator:
    return np.random.default_rng([_as_int(k) for k in keys])


def derive_seed(*keys) -> int:
    """Collapse a key tuple into one 63-bit integer seed."""
    state = np.random.SeedSequence([_as_int(k) for k in keys]).generate_state(2, np.uint32)
    return (int(state[0]) << 31) ^ int(state[1])
