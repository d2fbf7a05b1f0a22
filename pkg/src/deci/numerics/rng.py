from __future__ import annotations

import zlib

import numpy as np


class RngStream:
    """Seeded random stream. Identical seeds give identical draw sequences.

    ``child(name)`` derives an independent stream keyed by a string, so adding
    draws in one component does not shift the draws of another.
    """

    def __init__(self, seed: int, key: tuple[int, ...] = ()):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self.key = key
        self.counter = 0
        self.gen = np.random.Generator(np.random.PCG64(np.random.SeedSequence([self.seed, *key])))

    def child(self, name: str) -> RngStream:
        return RngStream(self.seed, self.key + (zlib.crc32(name.encode()),))

    def normal(self, size=None, loc=0.0, scale=1.0) -> np.ndarray:
        self.counter += 1
        return self.gen.normal(loc, scale, size)

    def uniform(self, size=None, low=0.0, high=1.0) -> np.ndarray:
        self.counter += 1
        return self.gen.uniform(low, high, size)

    def gumbel(self, size=None) -> np.ndarray:
        self.counter += 1
        return self.gen.gumbel(0.0, 1.0, size)

    def integers(self, low, high=None, size=None) -> np.ndarray:
        self.counter += 1
        return self.gen.integers(low, high, size)

    def permutation(self, n: int) -> np.ndarray:
        self.counter += 1
        return self.gen.permutation(n)

    def choice(self, a, size=None, replace=True, p=None):
        self.counter += 1
        return self.gen.choice(a, size=size, replace=replace, p=p)

    def exponential(self, size=None, scale=1.0) -> np.ndarray:
        self.counter += 1
        return self.gen.exponential(scale, size)


def as_stream(rng: RngStream | int | None) -> RngStream:
    if isinstance(rng, RngStream):
        return rng
    return RngStream(0 if rng is None else rng)
