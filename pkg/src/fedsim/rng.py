"""Self-contained deterministic random number generation.

All randomness in this package flows through SplitMix64 so that shuffles,
initializations, and synthetic corpora are bit-identical across platforms,
Python versions, and numpy releases. numpy's Generator makes no cross-version
stream guarantee, which would silently invalidate frozen regression values.
"""

from __future__ import annotations

import numpy as np

MASK64 = (1 << 64) - 1

_GAMMA = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB


def splitmix64(x: int) -> int:
    """One SplitMix64 state advance + output mix of a 64-bit integer."""
    x = (x + _GAMMA) & MASK64
    x ^= x >> 30
    x = (x * _MIX1) & MASK64
    x ^= x >> 27
    x = (x * _MIX2) & MASK64
    x ^= x >> 31
    return x


def derive_seed(*parts: int) -> int:
    """Fold integers into one 64-bit seed by chained SplitMix64 mixing.

    derive_seed(seed, k, r) is the documented per-client, per-round seed:
    h = splitmix64(seed); h = splitmix64(h ^ k); h = splitmix64(h ^ r).
    """
    h = 0
    for part in parts:
        h = splitmix64((h ^ part) & MASK64)
    return h


class SplitMix64:
    """Sequential SplitMix64 stream with the handful of draws we need."""

    __slots__ = ("_state",)

    def __init__(self, seed: int):
        self._state = seed & MASK64

    def u64(self) -> int:
        self._state = (self._state + _GAMMA) & MASK64
        x = self._state
        x ^= x >> 30
        x = (x * _MIX1) & MASK64
        x ^= x >> 27
        x = (x * _MIX2) & MASK64
        x ^= x >> 31
        return x

    def random(self) -> float:
        # 53 uniform mantissa bits -> [0, 1)
        return (self.u64() >> 11) * (2.0**-53)

    def below(self, n: int) -> int:
        """Unbiased integer in [0, n) via rejection sampling."""
        if n <= 0:
            raise ValueError("below() requires n >= 1")
        limit = MASK64 - (MASK64 + 1) % n
        while True:
            x = self.u64()
            if x <= limit:
                return x % n

    def shuffle(self, values: list) -> None:
        """In-place Fisher-Yates (Durstenfeld) shuffle."""
        for i in range(len(values) - 1, 0, -1):
            j = self.below(i + 1)
            values[i], values[j] = values[j], values[i]

    def permutation(self, n: int) -> np.ndarray:
        order = list(range(n))
        self.shuffle(order)
        return np.asarray(order, dtype=np.int64)

    def uniform(self, low: float, high: float, size) -> np.ndarray:
        span = high - low
        flat = [low + span * self.random() for _ in range(int(np.prod(size)))]
        return np.asarray(flat, dtype=np.float64).reshape(size)
