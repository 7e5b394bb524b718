"""Seed derivation: splitmix64 mixing feeding numpy's PCG64 streams."""

from __future__ import annotations

import numpy as np

_MASK = (1 << 64) - 1


def splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _MASK
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK
    return x ^ (x >> 31)


def derive_seed(master: int, *keys: int) -> int:
    """Fold integer keys into a master seed; distinct key paths give unrelated 64-bit seeds."""
    state = splitmix64(master & _MASK)
    for k in keys:
        state = splitmix64(state ^ (k & _MASK))
    return state


def generator(master: int, *keys: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(derive_seed(master, *keys)))
