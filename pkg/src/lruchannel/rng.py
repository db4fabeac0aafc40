"""Seedable, splittable pseudo-random streams.

``SplitMix64`` is the generator used wherever an implementation-independent
draw sequence matters (the Random replacement policy).  The algorithm is the
standard one: add the golden-gamma constant to a 64-bit state, then apply two
xor-shift-multiply rounds and a final xor-shift.

Everything else (warm-up streams, latency samples, noise) draws from
``random.Random`` instances seeded through :func:`derive_seed`, so every trial,
cell and actor gets its own stream that does not depend on execution order.
"""

from __future__ import annotations

import hashlib
import random

MASK64 = (1 << 64) - 1
GOLDEN_GAMMA = 0x9E3779B97F4A7C15


def mix64(z: int) -> int:
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


class SplitMix64:
    """64-bit SplitMix generator (Steele, Lea and Flood)."""

    __slots__ = ("state",)

    def __init__(self, seed: int = 0):
        self.state = seed & MASK64

    def next_u64(self) -> int:
        self.state = (self.state + GOLDEN_GAMMA) & MASK64
        return mix64(self.state)

    def below(self, n: int) -> int:
        """Uniform integer in [0, n) by rejection, so there is no modulo bias."""
        if n <= 0:
            raise ValueError("n must be positive")
        limit = (1 << 64) - ((1 << 64) % n)
        while True:
            x = self.next_u64()
            if x < limit:
                return x % n

    def split(self) -> "SplitMix64":
        # child seeded from one output of the parent, as in the reference design
        return SplitMix64(mix64(self.next_u64()))


def derive_seed(master: int, *keys: object) -> int:
    """Stable 64-bit seed for the stream named by ``keys`` under ``master``.

    Keys are rendered with ``repr`` and hashed with BLAKE2b, which keeps the
    mapping identical across processes and Python versions.
    """
    text = repr((int(master),) + tuple(keys)).encode()
    return int.from_bytes(hashlib.blake2b(text, digest_size=8).digest(), "little")


def stream(master: int, *keys: object) -> random.Random:
    return random.Random(derive_seed(master, *keys))
