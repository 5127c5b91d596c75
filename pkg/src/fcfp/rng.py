"""Deterministic pseudo-random numbers for init, data synthesis and augmentation.

A single root seed fans out to named child streams so that adding a new
consumer never shifts the draws seen by existing ones.  The generator is
xoshiro256** seeded through splitmix64; both are implemented here directly
so results are identical across platforms and numpy versions.
"""

from __future__ import annotations

import math

import numpy as np

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


def _splitmix64_next(state: int) -> tuple[int, int]:
    state = (state + _GOLDEN) & _MASK64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return state, z ^ (z >> 31)


def derive_seed(seed: int, tag: int) -> int:
    """Stable child seed for stream `tag` of root `seed`."""
    _, a = _splitmix64_next((seed ^ ((tag + 1) * _GOLDEN)) & _MASK64)
    _, b = _splitmix64_next(a)
    return b


def _rotl(x: int, k: int) -> int:
    return ((x << k) | (x >> (64 - k))) & _MASK64


class Rng:
    """xoshiro256** stream with float/int/shuffle helpers.

    All draws happen in a fixed sequential order, so a given seed produces
    the same arrays regardless of platform or thread count.
    """

    def __init__(self, seed: int):
        self.seed = int(seed) & _MASK64
        s = self.seed
        state = []
        for _ in range(4):
            s, out = _splitmix64_next(s)
            state.append(out)
        self._s = state
        self._spare_normal: float | None = None

    def child(self, tag: int) -> "Rng":
        return Rng(derive_seed(self.seed, tag))

    def next_u64(self) -> int:
        s0, s1, s2, s3 = self._s
        result = (_rotl((s1 * 5) & _MASK64, 7) * 9) & _MASK64
        t = (s1 << 17) & _MASK64
        s2 ^= s0
        s3 ^= s1
        s1 ^= s2
        s0 ^= s3
        s2 ^= t
        s3 = _rotl(s3, 45)
        self._s = [s0, s1, s2, s3]
        return result

    def uniform(self) -> float:
        # 53-bit mantissa, value in [0, 1)
        return (self.next_u64() >> 11) * 2.0**-53

    def uniform_array(self, shape, low=0.0, high=1.0, dtype=np.float64) -> np.ndarray:
        n = int(np.prod(shape)) if shape else 1
        vals = [self.uniform() for _ in range(n)]
        arr = np.array(vals, dtype=np.float64) * (high - low) + low
        return arr.reshape(shape).astype(dtype)

    def normal(self) -> float:
        if self._spare_normal is not None:
            z = self._spare_normal
            self._spare_normal = None
            return z
        # Box-Muller; u1 shifted into (0, 1] so the log is always finite
        u1 = ((self.next_u64() >> 11) + 1) * 2.0**-53
        u2 = (self.next_u64() >> 11) * 2.0**-53
        r = math.sqrt(-2.0 * math.log(u1))
        self._spare_normal = r * math.sin(2.0 * math.pi * u2)
        return r * math.cos(2.0 * math.pi * u2)

    def normal_array(self, shape, mean=0.0, std=1.0, dtype=np.float64) -> np.ndarray:
        n = int(np.prod(shape)) if shape else 1
        vals = [self.normal() for _ in range(n)]
        arr = np.array(vals, dtype=np.float64) * std + mean
        return arr.reshape(shape).astype(dtype)

    def randbelow(self, n: int) -> int:
        """Unbiased integer in [0, n) by rejection sampling."""
        if n <= 0:
            raise ValueError("randbelow needs n >= 1")
        bound = ((1 << 64) // n) * n
        while True:
            r = self.next_u64()
            if r < bound:
                return r % n

    def randint(self, low: int, high: int) -> int:
        """Integer in [low, high] inclusive."""
        return low + self.randbelow(high - low + 1)

    def shuffle(self, items: list) -> None:
        """In-place Fisher-Yates."""
        for i in range(len(items) - 1, 0, -1):
            j = self.randbelow(i + 1)
            items[i], items[j] = items[j], items[i]

    def choice(self, items):
        return items[self.randbelow(len(items))]
