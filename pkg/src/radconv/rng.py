"""Portable deterministic pseudo-random generator.

A fixed, named algorithm so that any reimplementation can reproduce the exact
same test fixtures: the 64-bit xorshift64* generator (shifts 12/25/27,
multiplier 0x2545F4914F6CDD1D), seeded through one round of splitmix64.
Doubles take the top 53 bits of the output, giving uniforms in [0, 1).
All arithmetic is integer, so streams are bit-identical across platforms.
"""

from __future__ import annotations

import numpy as np

__all__ = ["PortableRng"]

_MASK64 = (1 << 64) - 1
_SPLITMIX_GAMMA = 0x9E3779B97F4A7C15
_XORSHIFT_MULT = 0x2545F4914F6CDD1D


def _splitmix64(state: int) -> int:
    z = (state + _SPLITMIX_GAMMA) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


class PortableRng:
    """xorshift64* stream; state must be nonzero, guaranteed by the seeding."""

    def __init__(self, seed: int):
        state = _splitmix64(int(seed) & _MASK64)
        self._state = state if state != 0 else _SPLITMIX_GAMMA

    def next_u64(self) -> int:
        x = self._state
        x ^= x >> 12
        x = (x ^ (x << 25)) & _MASK64
        x ^= x >> 27
        self._state = x
        return (x * _XORSHIFT_MULT) & _MASK64

    def uniform(self, lo: float = 0.0, hi: float = 1.0) -> float:
        u = (self.next_u64() >> 11) * (1.0 / (1 << 53))
        return lo + (hi - lo) * u

    def uniforms(self, shape, lo: float = 0.0, hi: float = 1.0) -> np.ndarray:
        if isinstance(shape, int):
            shape = (shape,)
        n = 1
        for dim in shape:
            n *= int(dim)
        out = np.empty(n, dtype=np.float64)
        for i in range(n):
            out[i] = self.uniform(lo, hi)
        return out.reshape(shape)

    def integer(self, n: int) -> int:
        """Uniform integer in [0, n)."""
        if n < 1:
            raise ValueError(f"integer bound must be positive, got {n}")
        return int(self.uniform() * n) % n
