from __future__ import annotations

import numpy as np

from ..codebook import sq_distances
from ..errors import ConfigurationError, ShapeError


def as_batch(x: np.ndarray, dim: int) -> tuple[np.ndarray, bool]:
    """Promote a single descriptor to a 1-row batch; report whether it was single."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    x = np.atleast_2d(x)
    if x.ndim != 2 or x.shape[1] != dim:
        raise ShapeError(f"descriptor dim {x.shape[-1]} != codebook dim {dim}")
    return x, single


def unbatch(out: np.ndarray, single: bool) -> np.ndarray:
    return out[0] if single else out


def nearest(x: np.ndarray, centroids: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Indices and squared distances of the ``k`` nearest codewords per row.

    Ties are broken towards the lower codeword index.
    """
    K = centroids.shape[0]
    if not 1 <= k <= K:
        raise ConfigurationError(f"neighbour count {k} not in [1, {K}]")
    dist = sq_distances(x, centroids)
    if k == 1:
        idx = np.argmin(dist, axis=1)[:, None]
    else:
        idx = np.argsort(dist, axis=1, kind="stable")[:, :k]
    return idx, np.take_along_axis(dist, idx, axis=1)


def softmax_weights(neg_beta_dist: np.ndarray) -> np.ndarray:
    m = np.max(neg_beta_dist, axis=1, keepdims=True)
    e = np.exp(neg_beta_dist - m)
    return e / e.sum(axis=1, keepdims=True)


def soft_assign(x: np.ndarray, centroids: np.ndarray, beta: float, k: int | None) -> np.ndarray:
    """Normalised ``exp(-beta * ||x - d_i||^2)`` weights, optionally restricted to the k nearest."""
    K = centroids.shape[0]
    if k is None or k == K:
        return softmax_weights(-beta * sq_distances(x, centroids))
    idx, d = nearest(x, centroids, k)
    w = np.zeros((x.shape[0], K))
    np.put_along_axis(w, idx, softmax_weights(-beta * d), axis=1)
    return w
