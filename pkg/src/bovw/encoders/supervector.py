"""Super-vector encoders: per-codeword blocks of residual statistics.

Output layout is always ``K`` contiguous blocks; block widths are
``2D`` (FV), ``D`` (VLAD), ``1 + D`` (SVC) and ``1 + C`` (LTC).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from ..codebook import Codebook, GmmModel, posterior
from ..errors import ConfigurationError, InsufficientDataError
from ._common import as_batch, nearest, soft_assign, unbatch

log = logging.getLogger(__name__)

ASSIGNMENTS = ("hard", "soft-k", "soft-all")


@dataclass(frozen=True)
class SuperVectorConfig:
    assignment: str = "hard"
    k: int = 5
    alpha_balance: float = 0.1
    beta: float = 1.0
    ltc_intrinsic_dim: int | None = None

    def __post_init__(self):
        if self.assignment not in ASSIGNMENTS:
            raise ConfigurationError(f"assignment must be one of {ASSIGNMENTS}, got {self.assignment!r}")
        if self.k < 1:
            raise ConfigurationError(f"k must be >= 1, got {self.k}")
        if self.alpha_balance <= 0:
            raise ConfigurationError(f"alpha must be positive, got {self.alpha_balance}")
        if self.beta <= 0:
            raise ConfigurationError(f"beta must be positive, got {self.beta}")


def assignment_weights(xb: np.ndarray, cb: Codebook, cfg: SuperVectorConfig) -> np.ndarray:
    """Hard one-hot, localized soft (k nearest) or global soft weights, N x K."""
    if cfg.assignment == "hard":
        idx, _ = nearest(xb, cb.centroids, 1)
        w = np.zeros((len(xb), cb.size))
        w[np.arange(len(xb)), idx[:, 0]] = 1.0
        return w
    if cfg.assignment == "soft-k":
        if cfg.k > cb.size:
            raise ConfigurationError(f"k={cfg.k} exceeds codebook size {cb.size}")
        return soft_assign(xb, cb.centroids, cfg.beta, cfg.k)
    return soft_assign(xb, cb.centroids, cfg.beta, None)


def encode_fv(x: np.ndarray, g: GmmModel) -> np.ndarray:
    """Improved Fisher vector; block k is ``[G_mu_k, G_sigma_k]``.

    ``G_mu_k = gamma_k (x - mu_k) / sigma_k / sqrt(pi_k)`` and
    ``G_sigma_k = gamma_k ((x - mu_k)^2 / sigma_k^2 - 1) / sqrt(2 pi_k)``.
    """
    xb, single = as_batch(x, g.dim)
    gamma = np.atleast_2d(posterior(g, xb))
    z = (xb[:, None, :] - g.means[None]) / np.sqrt(g.variances)[None]
    g_mu = gamma[:, :, None] * z / np.sqrt(g.weights)[None, :, None]
    g_sigma = gamma[:, :, None] * (z * z - 1.0) / np.sqrt(2.0 * g.weights)[None, :, None]
    out = np.concatenate([g_mu, g_sigma], axis=2).reshape(len(xb), -1)
    return unbatch(out, single)


def encode_vlad(x: np.ndarray, cb: Codebook, cfg: SuperVectorConfig = SuperVectorConfig()) -> np.ndarray:
    """Weighted residuals ``w_i (x - d_i)`` per codeword; ``w`` follows ``cfg.assignment``."""
    xb, single = as_batch(x, cb.dim)
    w = assignment_weights(xb, cb, cfg)
    out = (w[:, :, None] * (xb[:, None, :] - cb.centroids[None])).reshape(len(xb), -1)
    return unbatch(out, single)


def encode_svc(
    x: np.ndarray,
    cb: Codebook,
    cfg: SuperVectorConfig = SuperVectorConfig(),
    n_descriptors: int = 1,
) -> np.ndarray:
    """Super vector coding; block i is ``[alpha * c_i, c_i * (x - d_i)]`` with ``c_i = w_i / (N sqrt(p_i))``.

    ``n_descriptors`` is the number of descriptors in the video, so that sum
    pooling yields the per-video average.
    """
    if np.any(cb.priors <= 0):
        raise ConfigurationError("super vector coding needs every codeword prior > 0")
    if n_descriptors < 1:
        raise ConfigurationError("n_descriptors must be positive")
    xb, single = as_batch(x, cb.dim)
    w = assignment_weights(xb, cb, cfg)
    c = w / (n_descriptors * np.sqrt(cb.priors))[None, :]
    resid = c[:, :, None] * (xb[:, None, :] - cb.centroids[None])
    out = np.concatenate([cfg.alpha_balance * c[:, :, None], resid], axis=2).reshape(len(xb), -1)
    return unbatch(out, single)


@dataclass(frozen=True)
class LtcProjections:
    """Per-codeword tangent bases ``U_i`` (K x D x C) and which ones were padded."""

    bases: np.ndarray
    padded: np.ndarray

    @property
    def intrinsic_dim(self) -> int:
        return self.bases.shape[2]


def fit_ltc_projections(residual_sets: list[np.ndarray], C: int) -> LtcProjections:
    """Top-``C`` principal directions of each codeword's weighted residuals.

    ``residual_sets[i]`` holds rows ``s(i) (x - d_i)`` for the training
    descriptors with ``s(i) != 0``. A codeword with fewer than ``C`` rows gets
    zero columns in place of the missing directions and is flagged.
    """
    if not residual_sets:
        raise InsufficientDataError("no residual sets given")
    D = residual_sets[0].shape[1]
    if not 1 <= C <= D:
        raise ConfigurationError(f"intrinsic dim {C} not in [1, {D}]")
    bases = np.zeros((len(residual_sets), D, C))
    padded = np.zeros(len(residual_sets), dtype=bool)
    for i, r in enumerate(residual_sets):
        r = np.asarray(r, dtype=np.float64).reshape(-1, D)
        if len(r) < C:
            padded[i] = True
            log.warning("LTC: codeword %d has %d residuals < C=%d; padding with zeros", i, len(r), C)
        if len(r) == 0:
            continue
        centered = r - r.mean(axis=0) if len(r) > 1 else r
        _, sv, vt = np.linalg.svd(centered, full_matrices=False)
        usable = min(C, int(np.sum(sv > sv[0] * 1e-12)) if sv.size and sv[0] > 0 else 0)
        if usable < C:
            padded[i] = True
        vecs = vt[:usable].T
        pivots = np.argmax(np.abs(vecs), axis=0)
        signs = np.sign(vecs[pivots, np.arange(usable)])
        signs[signs == 0] = 1.0
        bases[i, :, :usable] = vecs * signs
    return LtcProjections(bases=bases, padded=padded)


def ltc_residual_sets(x: np.ndarray, cb: Codebook, codes: np.ndarray) -> list[np.ndarray]:
    """Group ``s(i) (x - d_i)`` by codeword for rows where ``s(i) != 0``."""
    out = []
    for i in range(cb.size):
        mask = codes[:, i] != 0
        out.append(codes[mask, i, None] * (x[mask] - cb.centroids[i]))
    return out


def encode_ltc(
    x: np.ndarray,
    cb: Codebook,
    projections: LtcProjections | None,
    cfg: SuperVectorConfig = SuperVectorConfig(),
    codes: np.ndarray | None = None,
) -> np.ndarray:
    """Local tangent coding; block i is ``[alpha * s(i), s(i) (x - d_i)^T U_i]``.

    ``codes`` are local coordinate codes ``s`` (one row per descriptor); when
    omitted they are computed with the default LCC solver.
    """
    if projections is None:
        raise ConfigurationError("LTC needs fitted tangent projections")
    if projections.bases.shape[:2] != (cb.size, cb.dim):
        raise ConfigurationError(
            f"projections shaped {projections.bases.shape} do not match codebook {cb.size}x{cb.dim}"
        )
    xb, single = as_batch(x, cb.dim)
    if codes is None:
        from .reconstruction import encode_lcc

        codes = encode_lcc(xb, cb)
    codes = np.atleast_2d(codes)
    resid = codes[:, :, None] * (xb[:, None, :] - cb.centroids[None])  # N x K x D
    proj = np.einsum("nkd,kdc->nkc", resid, projections.bases)
    out = np.concatenate([cfg.alpha_balance * codes[:, :, None], proj], axis=2).reshape(len(xb), -1)
    return unbatch(out, single)
