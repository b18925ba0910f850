"""PCA dimensionality reduction followed by eigenvalue whitening."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateDataError, InsufficientDataError, ShapeError

DEFAULT_EIGENVALUE_FLOOR = 1e-10

# Target dimensions used for the STIP and iDT descriptor channels.
DEFAULT_OUTPUT_DIMS = {
    "stip": 100,
    "stip/hog": 40,
    "stip/hof": 60,
    "idt": 200,
    "idt/hog": 48,
    "idt/hof": 54,
    "idt/mbhx": 48,
    "idt/mbhy": 48,
}


class CovarianceAccumulator:
    """Streaming mean/scatter accumulator that can be merged across partitions.

    Uses the pairwise mean/scatter merge, so partitioned accumulation
    followed by ``merge`` matches a single pass up to rounding.
    """

    def __init__(self, dim: int):
        self.dim = dim
        self.count = 0
        self.mean = np.zeros(dim)
        self.scatter = np.zeros((dim, dim))

    def update(self, rows: np.ndarray) -> "CovarianceAccumulator":
        rows = np.asarray(rows, dtype=np.float64)
        if rows.ndim != 2 or rows.shape[1] != self.dim:
            raise ShapeError(f"expected rows of dim {self.dim}, got {rows.shape}")
        if len(rows) == 0:
            return self
        other = CovarianceAccumulator(self.dim)
        other.count = len(rows)
        other.mean = rows.mean(axis=0)
        centered = rows - other.mean
        other.scatter = centered.T @ centered
        return self.merge(other)

    def merge(self, other: "CovarianceAccumulator") -> "CovarianceAccumulator":
        if other.count == 0:
            return self
        if self.count == 0:
            self.count, self.mean, self.scatter = other.count, other.mean.copy(), other.scatter.copy()
            return self
        n = self.count + other.count
        delta = other.mean - self.mean
        self.scatter = (
            self.scatter
            + other.scatter
            + np.outer(delta, delta) * (self.count * other.count / n)
        )
        self.mean = self.mean + delta * (other.count / n)
        self.count = n
        return self

    def covariance(self) -> np.ndarray:
        return self.scatter / (self.count - 1)


@dataclass(frozen=True)
class WhitenTransform:
    """Fitted PCA projection plus the whitening scale ``1/sqrt(eigenvalue)``.

    ``projection`` is ``input_dim x output_dim`` with orthonormal columns,
    ``eigenvalues`` is sorted non-increasing and already floored.
    """

    projection: np.ndarray
    eigenvalues: np.ndarray
    mean: np.ndarray
    eigenvalue_floor: float = DEFAULT_EIGENVALUE_FLOOR

    @property
    def input_dim(self) -> int:
        return self.projection.shape[0]

    @property
    def output_dim(self) -> int:
        return self.projection.shape[1]

    @property
    def scale(self) -> np.ndarray:
        return 1.0 / np.sqrt(self.eigenvalues)

    def __call__(self, f: np.ndarray) -> np.ndarray:
        return apply_whiten(self, f)


def fit_whiten(
    data: np.ndarray,
    output_dim: int,
    eigenvalue_floor: float = DEFAULT_EIGENVALUE_FLOOR,
    chunk_size: int = 65536,
) -> WhitenTransform:
    """Fit a whitening transform on the rows of ``data``.

    The data mean is removed before the covariance is formed; the top
    ``output_dim`` eigenvectors of that covariance become the projection.
    """
    data = np.asarray(data)
    if data.ndim != 2:
        raise ShapeError(f"data must be 2-D, got shape {data.shape}")
    n, dim = data.shape
    if output_dim < 1 or output_dim > dim:
        raise ShapeError(f"output_dim {output_dim} not in [1, {dim}]")
    if n < output_dim + 1:
        raise InsufficientDataError(
            f"need at least {output_dim + 1} samples to fit {output_dim} components, got {n}"
        )
    acc = CovarianceAccumulator(dim)
    for start in range(0, n, chunk_size):
        acc.update(data[start : start + chunk_size])
    if not np.any(acc.scatter):
        raise DegenerateDataError("all descriptors are identical; covariance is zero")

    cov = acc.covariance()
    cov = 0.5 * (cov + cov.T)
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals, kind="stable")[::-1][:output_dim]
    evals = evals[order]
    evecs = evecs[:, order]
    # Sign convention: largest-magnitude loading of each column is positive.
    pivots = np.argmax(np.abs(evecs), axis=0)
    signs = np.sign(evecs[pivots, np.arange(output_dim)])
    signs[signs == 0] = 1.0
    evecs = evecs * signs
    evals = np.maximum(evals, eigenvalue_floor)
    return WhitenTransform(
        projection=evecs,
        eigenvalues=evals,
        mean=acc.mean,
        eigenvalue_floor=eigenvalue_floor,
    )


def apply_whiten(t: WhitenTransform, f: np.ndarray) -> np.ndarray:
    """Return ``diag(1/sqrt(lambda)) U^T (f - mean)`` for one vector or a batch of rows."""
    f = np.asarray(f, dtype=np.float64)
    if f.shape[-1] != t.input_dim:
        raise ShapeError(f"descriptor dim {f.shape[-1]} != transform input dim {t.input_dim}")
    return ((f - t.mean) @ t.projection) * t.scale
