"""Synthetic data sets for tests and demos."""

import numpy as np

TWO_BLOBS = {
    "weights": (0.5, 0.5),
    "means": ((-2.0, 0.0), (2.0, 1.0)),
    "covs": (((0.25, 0.0), (0.0, 0.25)), ((0.49, 0.15), (0.15, 0.16))),
}


def gaussian_mixture(n, weights, means, covs, seed=0):
    rng = np.random.Generator(np.random.PCG64(seed))
    weights = np.asarray(weights, dtype=float)
    means = np.asarray(means, dtype=float)
    covs = np.asarray(covs, dtype=float)
    comp = rng.choice(len(weights), size=n, p=weights / weights.sum())
    out = np.empty((n, means.shape[1]))
    for k in range(len(weights)):
        idx = np.flatnonzero(comp == k)
        L = np.linalg.cholesky(covs[k])
        out[idx] = means[k] + rng.standard_normal((idx.size, means.shape[1])) @ L.T
    return out


def two_blobs(n, seed=0):
    """Two-component 2D Gaussian mixture with one tilted component."""
    return gaussian_mixture(n, seed=seed, **TWO_BLOBS)


def ring(n, radius=2.0, width=0.2, seed=0):
    rng = np.random.Generator(np.random.PCG64(seed))
    t = rng.uniform(0, 2 * np.pi, n)
    r = radius + width * rng.standard_normal(n)
    return np.column_stack([r * np.cos(t), r * np.sin(t)])


def gaussian(n, d=2, seed=0):
    return np.random.Generator(np.random.PCG64(seed)).standard_normal((n, d))
