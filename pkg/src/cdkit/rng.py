"""Seeded random streams.

Every random draw in the package comes from a Philox generator (a 64-bit
counter-based bit generator) keyed by a :class:`numpy.random.SeedSequence`.
Streams are split by appending integer keys to the seed, so a trial's
randomness never depends on how many other trials ran before it or on which
thread ran it.
"""
from __future__ import annotations

import numpy as np

SeedLike = int | np.random.SeedSequence | None


def seed_sequence(seed: SeedLike, *keys: int) -> np.random.SeedSequence:
    if isinstance(seed, np.random.SeedSequence):
        if not keys:
            return seed
        return np.random.SeedSequence(seed.entropy, spawn_key=tuple(seed.spawn_key) + tuple(keys))
    return np.random.SeedSequence(0 if seed is None else int(seed), spawn_key=tuple(keys))


def make_rng(seed: SeedLike = None, *keys: int) -> np.random.Generator:
    """Return an independent Philox stream for ``(seed, *keys)``."""
    return np.random.Generator(np.random.Philox(seed_sequence(seed, *keys)))
