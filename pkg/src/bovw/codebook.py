"""Codebook learning: k-means partitions and diagonal-covariance GMMs."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import InsufficientDataError, ShapeError

log = logging.getLogger(__name__)

KMEANS_SAMPLE_BUDGET = 100_000
GMM_SAMPLE_BUDGET = 256_000
COLLAPSE_WEIGHT = 1e-8


@dataclass(frozen=True)
class Codebook:
    centroids: np.ndarray  # K x D
    priors: np.ndarray  # fraction of training rows assigned to each centroid
    objective_history: tuple = field(default=(), compare=False, repr=False)

    @property
    def size(self) -> int:
        return self.centroids.shape[0]

    @property
    def dim(self) -> int:
        return self.centroids.shape[1]


@dataclass(frozen=True)
class GmmModel:
    weights: np.ndarray  # K
    means: np.ndarray  # K x D
    variances: np.ndarray  # K x D, diagonal covariances
    variance_floor: float
    loglik_history: tuple = field(default=(), compare=False, repr=False)

    @property
    def size(self) -> int:
        return self.means.shape[0]

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        comp = rng.choice(self.size, size=n, p=self.weights / self.weights.sum())
        z = rng.standard_normal((n, self.dim))
        return self.means[comp] + z * np.sqrt(self.variances[comp])


def sq_distances(x: np.ndarray, centers: np.ndarray) -> np.ndarray:
    """Squared Euclidean distances between rows of ``x`` and rows of ``centers``."""
    d = (
        np.einsum("ij,ij->i", x, x)[:, None]
        - 2.0 * x @ centers.T
        + np.einsum("ij,ij->i", centers, centers)[None, :]
    )
    return np.maximum(d, 0.0)


def sample_rows(data: np.ndarray, budget: int | None, rng: np.random.Generator) -> np.ndarray:
    """Uniformly subsample at most ``budget`` rows, keeping their original order."""
    if budget is None or len(data) <= budget:
        return data
    idx = np.sort(rng.choice(len(data), size=budget, replace=False))
    return data[idx]


def kmeans_plusplus(data: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = len(data)
    centers = np.empty((k, data.shape[1]))
    centers[0] = data[rng.integers(n)]
    closest = sq_distances(data, centers[:1])[:, 0]
    for i in range(1, k):
        total = closest.sum()
        if total <= 0:
            # fewer distinct points than k; fall back to any row
            idx = rng.integers(n)
        else:
            idx = int(np.searchsorted(np.cumsum(closest), rng.random() * total, side="right"))
            idx = min(idx, n - 1)
        centers[i] = data[idx]
        closest = np.minimum(closest, sq_distances(data, centers[i : i + 1])[:, 0])
    return centers


def kmeans_fit(
    data: np.ndarray,
    K: int,
    max_iters: int = 100,
    seed: int = 0,
) -> Codebook:
    """Lloyd iteration from k-means++ seeds.

    ``objective_history[t]`` is the sum of squared distances after the t-th
    assignment step; it never increases. Clusters that end up empty are moved
    onto the row that is currently farthest from its own centroid.
    """
    data = np.asarray(data, dtype=np.float64)
    if data.ndim != 2:
        raise ShapeError(f"data must be 2-D, got shape {data.shape}")
    n = len(data)
    if K < 1 or K > n:
        raise InsufficientDataError(f"cannot fit {K} centroids to {n} samples")
    rng = np.random.default_rng(seed)
    centers = kmeans_plusplus(data, K, rng)

    history = []
    labels = None
    for _ in range(max_iters):
        dist = sq_distances(data, centers)
        new_labels = np.argmin(dist, axis=1)
        # direct differences keep the objective free of cancellation error
        best = np.sum((data - centers[new_labels]) ** 2, axis=1)
        history.append(float(best.sum()))
        if labels is not None and np.array_equal(new_labels, labels):
            break
        labels = new_labels
        counts = np.bincount(labels, minlength=K)
        sums = np.stack([np.bincount(labels, weights=col, minlength=K) for col in data.T], axis=1)
        nonempty = counts > 0
        centers[nonempty] = sums[nonempty] / counts[nonempty, None]
        for j in np.flatnonzero(~nonempty):
            far = int(np.argmax(best))
            log.info("k-means: cluster %d empty, re-seeded at row %d", j, far)
            centers[j] = data[far]
            best[far] = 0.0
    dist = sq_distances(data, centers)
    labels = np.argmin(dist, axis=1)
    priors = np.bincount(labels, minlength=K) / n
    return Codebook(centroids=centers, priors=priors, objective_history=tuple(history))


def _log_joint(x: np.ndarray, weights, means, variances) -> np.ndarray:
    """Per-row, per-component ``log pi_k + log N(x; mu_k, diag(var_k))``."""
    inv = 1.0 / variances
    if x.shape[0] * means.size <= 1 << 20:
        diff = x[:, None, :] - means[None, :, :]
        quad = np.sum(diff * diff * inv[None], axis=2)
    else:
        quad = (
            (x * x) @ inv.T
            - 2.0 * x @ (means * inv).T
            + np.sum(means * means * inv, axis=1)[None, :]
        )
    log_norm = -0.5 * (x.shape[1] * np.log(2 * np.pi) + np.sum(np.log(variances), axis=1))
    return np.log(weights)[None, :] + log_norm[None, :] - 0.5 * np.maximum(quad, 0.0)


def _logsumexp_rows(a: np.ndarray) -> np.ndarray:
    m = np.max(a, axis=1, keepdims=True)
    return (m + np.log(np.sum(np.exp(a - m), axis=1, keepdims=True)))[:, 0]


def gmm_fit(
    data: np.ndarray,
    K: int,
    max_iters: int = 100,
    seed: int = 0,
    variance_floor: float | None = None,
    tol: float = 1e-6,
    init: Codebook | None = None,
) -> GmmModel:
    """EM for a diagonal-covariance mixture, started from a k-means solution.

    ``variance_floor`` defaults to 1e-6 times the mean per-dimension variance
    of ``data``. Iteration stops after ``max_iters`` or when the relative
    improvement of the mean log-likelihood drops below ``tol``.
    """
    data = np.asarray(data, dtype=np.float64)
    if data.ndim != 2:
        raise ShapeError(f"data must be 2-D, got shape {data.shape}")
    n, dim = data.shape
    if K < 1 or K > n:
        raise InsufficientDataError(f"cannot fit {K} components to {n} samples")
    if variance_floor is None:
        variance_floor = 1e-6 * float(np.mean(np.var(data, axis=0)))
        variance_floor = max(variance_floor, np.finfo(float).tiny)

    cb = init if init is not None else kmeans_fit(data, K, max_iters=max_iters, seed=seed)
    labels = np.argmin(sq_distances(data, cb.centroids), axis=1)
    means = cb.centroids.copy()
    variances = np.empty_like(means)
    global_var = np.maximum(np.var(data, axis=0), variance_floor)
    for k in range(K):
        members = data[labels == k]
        variances[k] = np.var(members, axis=0) if len(members) > 1 else global_var
    variances = np.maximum(variances, variance_floor)
    weights = np.maximum(cb.priors.astype(np.float64), COLLAPSE_WEIGHT)
    weights /= weights.sum()

    history = []
    for _ in range(max_iters):
        joint = _log_joint(data, weights, means, variances)
        norm = _logsumexp_rows(joint)
        history.append(float(norm.mean()))
        if len(history) > 1:
            prev, cur = history[-2], history[-1]
            if abs(cur - prev) < tol * abs(prev):
                break
        resp = np.exp(joint - norm[:, None])
        nk = resp.sum(axis=0)
        weights = nk / n
        safe = np.maximum(nk, np.finfo(float).tiny)
        means = (resp.T @ data) / safe[:, None]
        variances = (resp.T @ (data * data)) / safe[:, None] - means * means
        variances = np.maximum(variances, variance_floor)
        collapsed = np.flatnonzero(weights < COLLAPSE_WEIGHT)
        if len(collapsed):
            worst = np.argsort(norm, kind="stable")
            for j, k in enumerate(collapsed):
                log.warning("GMM: component %d collapsed (weight %.3g); re-seeded", k, weights[k])
                means[k] = data[worst[j]]
                variances[k] = global_var
                weights[k] = 1.0 / n
            weights /= weights.sum()
    return GmmModel(
        weights=weights,
        means=means,
        variances=variances,
        variance_floor=float(variance_floor),
        loglik_history=tuple(history),
    )


def log_posterior(g: GmmModel, x: np.ndarray) -> np.ndarray:
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if x.shape[1] != g.dim:
        raise ShapeError(f"descriptor dim {x.shape[1]} != GMM dim {g.dim}")
    joint = _log_joint(x, g.weights, g.means, g.variances)
    return joint - _logsumexp_rows(joint)[:, None]


def posterior(g: GmmModel, x: np.ndarray) -> np.ndarray:
    """Soft assignments ``gamma_k`` of one descriptor (or each row of a batch)."""
    single = np.ndim(x) == 1
    gamma = np.exp(log_posterior(g, x))
    gamma /= gamma.sum(axis=1, keepdims=True)
    return gamma[0] if single else gamma


def log_likelihood(g: GmmModel, data: np.ndarray) -> float:
    """Mean per-row log-likelihood of ``data`` under ``g``."""
    data = np.atleast_2d(np.asarray(data, dtype=np.float64))
    return float(_logsumexp_rows(_log_joint(data, g.weights, g.means, g.variances)).mean())
