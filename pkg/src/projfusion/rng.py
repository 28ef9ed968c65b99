"""Deterministic random numbers, independent of numpy's global state.

Algorithm id: "splitmix64-v1". The core generator is splitmix64 (64-bit
state, golden-ratio increment, two xor-multiply finalizing rounds). Every
derived quantity is pinned here so streams stay stable across releases:

- uniform double in [0, 1): (x >> 11) * 2**-53
- standard normals: Box-Muller on pairs, u1 in (0, 1] via ((x >> 11) + 1) * 2**-53
- bounded int below n: rejection sampling on the largest multiple of n
- shuffle: Fisher-Yates, descending index, bounded-int draws
- derive(*words): fold words into a fresh seed with the same finalizer
"""

from __future__ import annotations

import numpy as np

MASK64 = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15

ALGORITHM = "splitmix64-v1"


def _mix(z: int) -> int:
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def derive(*words: int) -> int:
    """Fold integer words into a fresh 64-bit seed. derive() == mix-of-nothing is 0-safe."""
    acc = 0
    for w in words:
        acc = _mix(((acc ^ _mix(w & MASK64)) + GOLDEN) & MASK64)
    return acc


class SplitMix64:
    """splitmix64-v1 stream with vectorized block draws.

    Scalar and block paths produce the same stream: a block of m draws
    advances the state by m increments and finalizes each intermediate
    state, exactly as m scalar calls would.
    """

    def __init__(self, seed: int):
        self.state = seed & MASK64

    def next_u64(self) -> int:
        self.state = (self.state + GOLDEN) & MASK64
        return _mix(self.state)

    def _block_u64(self, m: int) -> np.ndarray:
        # vectorized: state_i = state + GOLDEN * (1..m), then the finalizer
        base = np.uint64(self.state)
        idx = np.arange(1, m + 1, dtype=np.uint64)
        with np.errstate(over="ignore"):
            z = base + np.uint64(GOLDEN) * idx
            z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
            z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
            z = z ^ (z >> np.uint64(31))
        self.state = (self.state + GOLDEN * m) & MASK64
        return z

    def next_below(self, n: int) -> int:
        """Uniform int in [0, n) via rejection sampling (no modulo bias)."""
        if n <= 0:
            raise ValueError("n must be positive")
        limit = (1 << 64) - ((1 << 64) % n)
        while True:
            x = self.next_u64()
            if x < limit:
                return x % n

    def random(self) -> float:
        return (self.next_u64() >> 11) * 2.0**-53

    def uniform(self, lo: float, hi: float, size=None):
        """Uniform floats in [lo, hi)."""
        if size is None:
            return lo + (hi - lo) * self.random()
        m = int(np.prod(size))
        u = (self._block_u64(m) >> np.uint64(11)).astype(np.float64) * 2.0**-53
        return (lo + (hi - lo) * u).reshape(size)

    def normal(self, size) -> np.ndarray:
        """Standard normals via Box-Muller; draws ceil(k/2) pairs, truncates."""
        k = int(np.prod(size))
        m = k + (k & 1)
        x = self._block_u64(m)
        # u1 in (0, 1] so log never sees 0
        u1 = ((x[0::2] >> np.uint64(11)).astype(np.float64) + 1.0) * 2.0**-53
        u2 = (x[1::2] >> np.uint64(11)).astype(np.float64) * 2.0**-53
        r = np.sqrt(-2.0 * np.log(u1))
        theta = 2.0 * np.pi * u2
        out = np.empty(m, dtype=np.float64)
        out[0::2] = r * np.cos(theta)
        out[1::2] = r * np.sin(theta)
        return out[:k].reshape(size)

    def shuffle(self, a) -> None:
        """In-place Fisher-Yates over a list or 1-D array."""
        n = len(a)
        for i in range(n - 1, 0, -1):
            j = self.next_below(i + 1)
            a[i], a[j] = a[j], a[i]

    def permutation(self, n: int) -> np.ndarray:
        p = np.arange(n)
        self.shuffle(p)
        return p
