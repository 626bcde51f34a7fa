"""Deterministic seed derivation used everywhere randomness is needed.

All derived seeds come from :class:`numpy.random.SeedSequence` over the
integer parts, so any (base seed, repetition, fold, epoch, ...) tuple maps
to a stable, platform-independent stream.
"""

from __future__ import annotations

import numpy as np

_MASK64 = (1 << 64) - 1


def seed_sequence(*parts: int) -> np.random.SeedSequence:
    """Build a SeedSequence from integer parts (negatives are wrapped to uint64)."""
    return np.random.SeedSequence([int(p) & _MASK64 for p in parts])


def derive_seed(*parts: int) -> int:
    """Collapse integer parts into a single stable 64-bit seed."""
    return int(seed_sequence(*parts).generate_state(1, np.uint64)[0])


def rng_for(*parts: int) -> np.random.Generator:
    """A fresh Generator seeded from the given parts."""
    return np.random.default_rng(seed_sequence(*parts))
