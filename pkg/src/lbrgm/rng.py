"""Seeded random streams.

Uniforms come from numpy's PCG64 bit generator seeded with the 64-bit seed;
normals are produced from pairs of uniforms with the Box-Muller transform,
``sqrt(-2 ln(1-u1)) * cos(2 pi u2)``, one pair per output value, in row-major
order. The stream is fixed for this package; cross-implementation
reproducibility goes through the model file instead.
"""
from __future__ import annotations

import numpy as np


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(int(seed) & 0xFFFFFFFFFFFFFFFF))


def normal(rng: np.random.Generator, shape, std: float = 1.0) -> np.ndarray:
    n = int(np.prod(shape, dtype=np.int64))
    u = rng.random((n, 2))
    z = np.sqrt(-2.0 * np.log1p(-u[:, 0])) * np.cos(2.0 * np.pi * u[:, 1])
    return (std * z).reshape(shape)
