"""Voting encoders: each descriptor votes directly for codewords.

All functions accept one descriptor (shape ``(D,)``) or a batch of rows
(shape ``(N, D)``) and return codes of shape ``(K,)`` or ``(N, K)``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from ..codebook import Codebook
from ..errors import ConfigurationError
from ._common import as_batch, nearest, soft_assign, unbatch

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class VotingConfig:
    beta: float = 1.0
    k: int = 5

    def __post_init__(self):
        if self.beta <= 0:
            raise ConfigurationError(f"beta must be positive, got {self.beta}")
        if self.k < 1:
            raise ConfigurationError(f"k must be >= 1, got {self.k}")


def encode_vq(x: np.ndarray, cb: Codebook) -> np.ndarray:
    """One-hot vote for the nearest codeword (lowest index on ties)."""
    xb, single = as_batch(x, cb.dim)
    idx, _ = nearest(xb, cb.centroids, 1)
    s = np.zeros((len(xb), cb.size))
    s[np.arange(len(xb)), idx[:, 0]] = 1.0
    return unbatch(s, single)


def encode_sa(
    x: np.ndarray, cb: Codebook, cfg: VotingConfig = VotingConfig(), localized: bool = False
) -> np.ndarray:
    """Soft assignment over every codeword, or over the ``cfg.k`` nearest when ``localized``."""
    xb, single = as_batch(x, cb.dim)
    if localized and cfg.k > cb.size:
        raise ConfigurationError(f"k={cfg.k} exceeds codebook size {cb.size}")
    s = soft_assign(xb, cb.centroids, cfg.beta, cfg.k if localized else None)
    return unbatch(s, single)


def _sorted_distances(xb: np.ndarray, cb: Codebook, n: int) -> tuple[np.ndarray, np.ndarray]:
    idx, d2 = nearest(xb, cb.centroids, n)
    return idx, np.sqrt(d2)


def encode_sc(x: np.ndarray, cb: Codebook, cfg: VotingConfig = VotingConfig()) -> np.ndarray:
    """Salient coding: the nearest codeword receives ``sum_j (r_j - r_1) / r_j`` over j = 2..k.

    ``r`` are the ascending distances to the k nearest codewords. A term whose
    denominator is zero (descriptor sitting on that codeword) contributes 0.
    """
    if cfg.k < 2:
        raise ConfigurationError("salient coding needs k >= 2")
    xb, single = as_batch(x, cb.dim)
    k = min(cfg.k, cb.size)
    idx, r = _sorted_distances(xb, cb, k)
    num = r[:, 1:] - r[:, :1]
    den = r[:, 1:]
    zero = den == 0
    if np.any(zero):
        log.info("salient coding: %d zero-distance terms dropped", int(zero.sum()))
    terms = np.divide(num, den, out=np.zeros_like(num), where=~zero)
    s = np.zeros((len(xb), cb.size))
    s[np.arange(len(xb)), idx[:, 0]] = terms.sum(axis=1)
    return unbatch(s, single)


def group_responses(r: np.ndarray, M: int) -> np.ndarray:
    """Group responses ``v^g = sum_{j=1}^{M+1-g} (r_{g+j} - r_g)`` for g = 1..M.

    ``r`` holds ascending distances (1-based index g maps to column g-1);
    only as many columns as are present are used.
    """
    n = r.shape[1]
    out = np.zeros((r.shape[0], M))
    for g in range(1, M + 1):
        hi = min(M + 1, n)  # last usable 1-based index k+j
        if g + 1 > hi:
            continue
        out[:, g - 1] = np.sum(r[:, g:hi] - r[:, g - 1 : g], axis=1)
    return out


def encode_gsc(x: np.ndarray, cb: Codebook, cfg: VotingConfig = VotingConfig()) -> np.ndarray:
    """Group salient coding with a single non-zero.

    For group sizes g = 1..M (M = ``cfg.k``) the response of the g nearest
    codewords is ``v^g``; the nearest codeword belongs to every group and keeps
    the maximum response, every other entry is zero. When the codebook has
    fewer than M+1 codewords the missing distances are dropped.
    """
    M = cfg.k
    xb, single = as_batch(x, cb.dim)
    n = min(M + 1, cb.size)
    idx, r = _sorted_distances(xb, cb, n)
    v = group_responses(r, M)
    s = np.zeros((len(xb), cb.size))
    s[np.arange(len(xb)), idx[:, 0]] = v.max(axis=1)
    return unbatch(s, single)
