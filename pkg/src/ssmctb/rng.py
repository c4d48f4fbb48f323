"""Portable seeded randomness.

Datasets are drawn from xorshift64* seeded through splitmix64, so any
language reproduces them bit-for-bit:

* ``state = splitmix64(seed)`` (replaced by the golden-ratio constant if 0)
* step: ``x ^= x >> 12; x ^= x << 25; x ^= x >> 27``; output ``x * 0x2545F4914F6CDD1D``
* ``uniform()``: top 53 bits of the output times ``2**-53``, in ``[0, 1)``
* ``randint(lo, hi)``: ``lo + (u64 * (hi - lo)) >> 64``
* ``normal()``: Box-Muller cosine branch with ``u1 = 1 - uniform()``

Named sub-seeds hash the name with 64-bit FNV-1a, xor it into the seed and
pass the result through splitmix64.  Model initialisation and minibatch order
use numpy generators seeded from such sub-seeds.
"""
from __future__ import annotations

import math

import numpy as np

MASK64 = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15


def splitmix64(x: int) -> int:
    z = (x + GOLDEN) & MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def fnv1a64(data: bytes) -> int:
    h = 0xCBF29CE484222325
    for b in data:
        h = ((h ^ b) * 0x100000001B3) & MASK64
    return h


def sub_seed(seed: int, name: str) -> int:
    return splitmix64((seed & MASK64) ^ fnv1a64(name.encode("utf-8")))


def numpy_rng(seed: int, name: str) -> np.random.Generator:
    return np.random.default_rng(sub_seed(seed, name))


class XorShift64Star:
    def __init__(self, seed: int) -> None:
        self.state = splitmix64(seed & MASK64) or GOLDEN

    def next_u64(self) -> int:
        x = self.state
        x ^= x >> 12
        x ^= (x << 25) & MASK64
        x ^= x >> 27
        self.state = x
        return (x * 0x2545F4914F6CDD1D) & MASK64

    def uniform(self, lo: float = 0.0, hi: float = 1.0) -> float:
        return lo + (hi - lo) * ((self.next_u64() >> 11) * 2.0 ** -53)

    def randint(self, lo: int, hi: int) -> int:
        """Integer in ``[lo, hi)``."""
        if hi <= lo:
            raise ValueError(f"empty range [{lo}, {hi})")
        return lo + ((self.next_u64() * (hi - lo)) >> 64)

    def normal(self, mu: float = 0.0, sigma: float = 1.0) -> float:
        u1 = 1.0 - self.uniform()
        u2 = self.uniform()
        return mu + sigma * math.sqrt(-2.0 * math.log(u1)) * math.cos(2.0 * math.pi * u2)

    def choice(self, items):
        return items[self.randint(0, len(items))]

    def shuffle(self, items: list) -> list:
        """Fisher-Yates shuffle in place; returns ``items``."""
        for i in range(len(items) - 1, 0, -1):
            j = self.randint(0, i + 1)
            items[i], items[j] = items[j], items[i]
        return items
