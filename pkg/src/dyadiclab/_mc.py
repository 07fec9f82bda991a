"""Seeded random streams and Monte-Carlo summary statistics."""

from __future__ import annotations

import math
import zlib

import numpy as np

N_BATCHES = 32


def _key(part) -> int:
    if isinstance(part, (int, np.integer)):
        return int(part) & 0xFFFFFFFF
    return zlib.crc32(str(part).encode("utf-8"))


def rng_for(seed: int, *keys) -> np.random.Generator:
    """Independent generator for the stream named by ``keys`` under ``seed``.

    Streams are derived from the key path rather than from call order, so a
    result never depends on which other streams were drawn first.
    """
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(_key(k) for k in keys))
    return np.random.Generator(np.random.PCG64(ss))


def batch_mean(values: np.ndarray, n_batches: int = N_BATCHES) -> tuple[float, float]:
    """Mean of ``values`` and its standard error from contiguous batch means."""
    values = np.asarray(values, dtype=float)
    n = values.size
    if n == 0:
        return 0.0, 0.0
    mean = math.fsum(values) / n
    b = min(n_batches, n)
    if b < 2:
        return mean, 0.0
    edges = np.linspace(0, n, b + 1).astype(int)
    means = np.array([values[lo:hi].mean() for lo, hi in zip(edges[:-1], edges[1:])])
    sizes = np.diff(edges)
    # unequal batch sizes: weighted spread around the overall mean
    var = np.sum(sizes * (means - mean) ** 2) / (n * (b - 1))
    return mean, float(math.sqrt(var))


def dominant_share(values: np.ndarray) -> float:
    """Fraction of the total carried by the single largest term."""
    values = np.abs(np.asarray(values, dtype=float))
    total = values.sum()
    if total == 0:
        return 0.0
    return float(values.max() / total)


def uniform_sphere(rng: np.random.Generator, count: int, n: int) -> np.ndarray:
    """``count`` uniform points on the unit sphere of C^n, shape (count, n)."""
    g = rng.standard_normal((count, 2 * n))
    g /= np.linalg.norm(g, axis=1, keepdims=True)
    return g[:, :n] + 1j * g[:, n:]


def uniform_ball(rng: np.random.Generator, count: int, n: int) -> np.ndarray:
    """``count`` uniform points in the unit ball of C^n (radial inverse CDF)."""
    directions = uniform_sphere(rng, count, n)
    radii = rng.random(count) ** (1.0 / (2 * n))
    return directions * radii[:, None]
