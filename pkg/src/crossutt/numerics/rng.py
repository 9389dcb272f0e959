"""Seeded random streams and weight initialisers."""
from __future__ import annotations

import numpy as np


class Rng:
    """A seeded PCG64 stream. ``spawn`` derives independent child streams."""

    def __init__(self, seed: int):
        self.seed = int(seed)
        self._seq = np.random.SeedSequence(self.seed)
        self.gen = np.random.Generator(np.random.PCG64(self._seq))

    def spawn(self, n: int) -> list["Rng"]:
        children = []
        for child in self._seq.spawn(n):
            r = Rng.__new__(Rng)
            r.seed = self.seed
            r._seq = child
            r.gen = np.random.Generator(np.random.PCG64(child))
            children.append(r)
        return children

    def get_state(self) -> dict:
        return self.gen.bit_generator.state

    def set_state(self, state: dict) -> None:
        self.gen.bit_generator.state = state

    def random(self, shape):
        return self.gen.random(shape)

    def normal(self, shape, scale=1.0):
        return self.gen.normal(0.0, scale, shape)


def xavier_uniform(rng: Rng, shape, fan_in: int, fan_out: int) -> np.ndarray:
    a = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.gen.uniform(-a, a, size=shape)
