"""Deterministic seed derivation.

Every random draw in the package flows through a Generator derived here, so
that a run is reproducible bit-for-bit from its recorded integer seeds.
"""

import numpy as np

_MASK64 = (1 << 64) - 1


def derived_rng(*parts: int) -> np.random.Generator:
    """Generator seeded from a tuple of integers (order-sensitive)."""
    entropy = [int(p) & _MASK64 for p in parts]
    return np.random.default_rng(np.random.SeedSequence(entropy))


def derived_seed(*parts: int) -> int:
    """Stable non-negative integer seed derived from a tuple of integers."""
    entropy = [int(p) & _MASK64 for p in parts]
    state = np.random.SeedSequence(entropy).generate_state(1, dtype=np.uint64)[0]
    return int(state >> 1)
