"""Deterministic RNG stream derivation.

Every stochastic component draws from its own named stream so that adding
or removing one consumer never shifts the draws seen by another. Streams
are keyed by a mix of integers (seeds, node ids, rounds) and string tags.
"""

from __future__ import annotations

import hashlib

import numpy as np


def _key_words(key) -> list[int]:
    if isinstance(key, str):
        digest = hashlib.sha256(key.encode("utf-8")).digest()
        return [int.from_bytes(digest[i : i + 4], "little") for i in range(0, 16, 4)]
    if isinstance(key, (int, np.integer)):
        if key < 0:
            raise ValueError(f"seed keys must be non-negative, got {key}")
        return [int(key)]
    raise TypeError(f"unsupported seed key type: {type(key).__name__}")


def seed_sequence(*keys) -> np.random.SeedSequence:
    words: list[int] = []
    for key in keys:
        words.extend(_key_words(key))
    return np.random.SeedSequence(words)


def rng_for(*keys) -> np.random.Generator:
    """Generator for a named stream, e.g. ``rng_for(seed, "augment", node, t)``."""
    return np.random.default_rng(seed_sequence(*keys))


def seed_for(*keys) -> int:
    """Stable non-negative integer seed derived from the named stream."""
    return int(seed_sequence(*keys).generate_state(1, np.uint64)[0] >> np.uint64(1))
