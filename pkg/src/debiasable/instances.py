"""Seeded random instance families shared by tests, acceptance checks and the CLI."""

import numpy as np

from .costs import CostMatrix
from .measures import DiscreteMeasure


def rng_for(seed, name=""):
    """Independent stream for ``(seed, name)``; equal inputs give equal streams."""
    words = [int(seed) & 0xFFFFFFFF] + [b for b in name.encode()]
    return np.random.default_rng(np.random.SeedSequence(words))


def random_points(rng, n, d):
    """``n`` points uniform in ``[0, 1]^d``."""
    return rng.random((n, d))


def dirichlet_weights(rng, n):
    return rng.dirichlet(np.ones(n))


def random_measure(rng, n, d=None):
    coords = None if d is None else random_points(rng, n, d)
    return DiscreteMeasure(dirichlet_weights(rng, n), coords)


def pairwise_power(x, y=None, p=2.0):
    """``|x_i - y_j|^p`` for point clouds of shape ``(n, d)`` or ``(n,)``."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64).T).T
    y = x if y is None else np.atleast_2d(np.asarray(y, dtype=np.float64).T).T
    dist = np.sqrt(((x[:, None, :] - y[None, :, :]) ** 2).sum(axis=-1))
    return dist**p


def squared_distances(x, y=None):
    x = np.atleast_2d(np.asarray(x, dtype=np.float64).T).T
    y = x if y is None else np.atleast_2d(np.asarray(y, dtype=np.float64).T).T
    return ((x[:, None, :] - y[None, :, :]) ** 2).sum(axis=-1)


def random_dyadic_debiasable(rng, n, scale=64, inf_prob=0.0):
    """Symmetric debiasable matrix with entries on the grid ``Z / scale``.

    Dyadic entries keep every half and difference exact in floating point,
    so representation roundtrips can be compared with ``==``.  With
    ``inf_prob > 0`` some off-diagonal pairs are set to ``+inf``.
    """
    diag = rng.integers(-4 * scale, 4 * scale, size=n) * 2 / scale  # even, so halves stay dyadic
    gap = rng.integers(0, 4 * scale, size=(n, n)) / scale
    gap = np.triu(gap, 1)
    gap = gap + gap.T
    c = (diag[:, None] + diag[None, :]) / 2 + gap
    if inf_prob > 0:
        mask = np.triu(rng.random((n, n)) < inf_prob, 1)
        c[mask | mask.T] = np.inf
    return CostMatrix(c, True)
