'''
Binary cache state of each candidate: 1 when the requested content sits in the
transmitter's cache (hit), 0 when it must come over the backhaul (miss).
'''
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np


@dataclass(frozen=True)
class CacheStateVector:
    bits: tuple[int, ...]

    def __post_init__(self):
        bits = tuple(int(b) for b in self.bits)
        if any(b not in (0, 1) for b in bits):
            raise ValueError(f"Cache bits must be 0 or 1, got {bits}")
        object.__setattr__(self, "bits", bits)

    def __len__(self):
        return len(self.bits)

    def __iter__(self):
        return iter(self.bits)


def sample_cache_states(p_hit: float, L: int, rng: np.random.Generator) -> CacheStateVector:
    """Each candidate independently hits its cache with probability p_hit."""
    if not 0.0 <= p_hit <= 1.0:
        raise ValueError(f"p_hit must lie in [0, 1], got {p_hit}")
    if L < 1:
        raise ValueError(f"L must be >= 1, got {L}")
    return CacheStateVector(tuple((rng.random(L) < p_hit).astype(int)))


def empirical_hit_ratio(vectors: Iterable[CacheStateVector]) -> float:
    """Fraction of 1 bits over a history of cache vectors (0 for an empty history)."""
    hits = 0
    total = 0
    for v in vectors:
        hits += sum(v.bits)
        total += len(v.bits)
    return hits / total if total else 0.0
