"""Deterministic seed derivation.

Every source of randomness in the package flows through generators derived
here from a master seed plus structural keys (iteration number, direction
index, task index, ...). Results are therefore reproducible bit-for-bit
regardless of scheduling order or worker count, and training can resume
from counters alone.
"""

from __future__ import annotations

import hashlib

import numpy as np

_MASK64 = (1 << 64) - 1


def _key_to_int(key) -> int:
    if isinstance(key, (int, np.integer)):
        return int(key) & _MASK64
    if isinstance(key, str):
        # python's hash() is salted per process; use a stable digest instead
        return int.from_bytes(hashlib.blake2b(key.encode(), digest_size=8).digest(), "little")
    raise TypeError(f"seed key must be int or str, got {type(key).__name__}")


def seed_sequence(*keys) -> np.random.SeedSequence:
    """Build a SeedSequence from a tuple of int/str keys."""
    return np.random.SeedSequence([_key_to_int(k) for k in keys])


def rng_from(*keys) -> np.random.Generator:
    """Derived generator; identical keys give identical streams."""
    return np.random.default_rng(seed_sequence(*keys))


def derive_seed(*keys) -> int:
    """Collapse keys into a single non-negative 63-bit seed."""
    state = seed_sequence(*keys).generate_state(2, dtype=np.uint32)
    return (int(state[0]) << 31) ^ int(state[1])
