"""Seeded, splittable random streams.

Philox is counter-based, so a stream derived from ``(seed, *keys)`` yields the
same integers on every platform and is independent of how many other streams
were drawn before it.
"""

from __future__ import annotations

import numpy as np


def make_rng(seed: int, *keys: int) -> np.random.Generator:
    entropy = [int(seed) & 0xFFFFFFFFFFFFFFFF] + [int(k) for k in keys]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))


def split(rng: np.random.Generator, n: int) -> list[np.random.Generator]:
    """Derive ``n`` child streams; consumes one draw from the parent."""
    base = int(rng.integers(0, 2**63))
    return [make_rng(base, i) for i in range(n)]
