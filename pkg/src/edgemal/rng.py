"""Deterministic pseudo-random primitives shared across the package.

Every generated artifact (weights, corpora, fault schedules) must be
bit-reproducible from an integer seed, independent of platform and of any
library PRNG. The generator is SplitMix64; floats take the top 53 bits,
normals come from Box-Muller.
"""

from __future__ import annotations

import math

_MASK64 = (1 << 64) - 1
_GAMMA = 0x9E3779B97F4A7C15


def _mix(z: int) -> int:
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9 & _MASK64
    z = (z ^ (z >> 27)) * 0x94D049BB133111EB & _MASK64
    return z ^ (z >> 31)


class SplitMix64:
    """SplitMix64 stream. State advances by the 64-bit golden-ratio constant."""

    def __init__(self, seed: int) -> None:
        self._state = seed & _MASK64

    def next_u64(self) -> int:
        self._state = (self._state + _GAMMA) & _MASK64
        return _mix(self._state)

    def uniform(self, lo: float = 0.0, hi: float = 1.0) -> float:
        # top 53 bits -> [0, 1) at full double precision
        u = (self.next_u64() >> 11) * (1.0 / (1 << 53))
        return lo + u * (hi - lo)

    def normal(self, mean: float = 0.0, std: float = 1.0) -> float:
        u1 = self.uniform()
        u2 = self.uniform()
        if u1 <= 0.0:
            u1 = 2.0 ** -53
        z = math.sqrt(-2.0 * math.log(u1)) * math.cos(2.0 * math.pi * u2)
        return mean + std * z

    def randint(self, n: int) -> int:
        """Integer in [0, n). Plain modulo reduction; the bias is irrelevant
        at the range sizes used here and keeps the stream portable."""
        if n <= 0:
            raise ValueError("n must be positive")
        return self.next_u64() % n

    def shuffle(self, items: list) -> None:
        """In-place Fisher-Yates shuffle."""
        for i in range(len(items) - 1, 0, -1):
            j = self.randint(i + 1)
            items[i], items[j] = items[j], items[i]

    def substream(self, tag: int) -> "SplitMix64":
        """Independent child stream for the given tag. Derive substreams from
        a freshly seeded generator so the mapping depends only on (seed, tag)."""
        return SplitMix64(_mix(self._state ^ _mix(tag * _GAMMA & _MASK64)))
