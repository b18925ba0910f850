"""Pooling of per-descriptor codes and normalisation of the pooled vector."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .encoders import Code, SuperVector, is_supervector
from .errors import ConfigurationError, EmptyVideoError, ShapeError

log = logging.getLogger(__name__)

POOLINGS = ("sum", "max")
INTRA = ("off", "l1", "l2")
FINAL = ("l1", "l2", "none")
ORDERS = ("power-intra", "intra-power")


@dataclass(frozen=True)
class PoolNormConfig:
    """Pooling plus normalisation chain.

    ``order`` decides whether the power transform runs before intra
    normalisation (the default) or after it; final normalisation is always last.
    """

    pooling: str = "sum"
    power_alpha: float | None = 0.5
    intra: str = "off"
    final_norm: str = "l2"
    order: str = "power-intra"

    def __post_init__(self):
        if self.pooling not in POOLINGS:
            raise ConfigurationError(f"pooling must be one of {POOLINGS}")
        if self.intra not in INTRA:
            raise ConfigurationError(f"intra must be one of {INTRA}")
        if self.final_norm not in FINAL:
            raise ConfigurationError(f"final_norm must be one of {FINAL}")
        if self.order not in ORDERS:
            raise ConfigurationError(f"order must be one of {ORDERS}")
        if self.power_alpha is not None and not 0.0 <= self.power_alpha <= 1.0:
            raise ConfigurationError(f"power_alpha must lie in [0, 1], got {self.power_alpha}")

    def chain(self) -> tuple[str, ...]:
        steps = []
        power = () if self.power_alpha is None else (f"power{self.power_alpha:g}",)
        intra = () if self.intra == "off" else (f"intra-{self.intra}",)
        steps += (power + intra) if self.order == "power-intra" else (intra + power)
        if self.final_norm != "none":
            steps.append(self.final_norm)
        return tuple(steps)

    def check_encoder(self, tag: str) -> None:
        if self.pooling == "max" and is_supervector(tag):
            raise ConfigurationError(f"max pooling is not defined for super-vector encoder {tag}")


# Pooling/normalisation each encoder family was evaluated with.
def default_poolnorm(tag: str) -> PoolNormConfig:
    if tag == "vq":
        return PoolNormConfig(pooling="sum", power_alpha=None, final_norm="l1")
    if tag in ("sa-k", "llc"):
        return PoolNormConfig(pooling="max", power_alpha=None, final_norm="l2")
    return PoolNormConfig(pooling="sum", power_alpha=0.5, final_norm="l2")


@dataclass(frozen=True)
class VideoRepresentation:
    vector: np.ndarray
    video_id: str = ""
    encoder_tag: str = ""
    channel: str = ""
    pooling: str = ""
    normalization: tuple[str, ...] = ()
    block_dim: int = 1
    parts: tuple[tuple[str, str, int], ...] = field(default=())

    @property
    def dim(self) -> int:
        return self.vector.shape[0]

    def provenance(self) -> dict:
        return {
            "video_id": self.video_id,
            "encoder": self.encoder_tag,
            "channel": self.channel,
            "pooling": self.pooling,
            "normalization": list(self.normalization),
            "block_dim": self.block_dim,
            "parts": [list(p) for p in self.parts],
        }


def _rows(codes) -> tuple[np.ndarray, str | None, int]:
    if isinstance(codes, (Code, SuperVector)):
        return np.atleast_2d(codes.values), codes.encoder_tag, codes.block_dim
    seq = list(codes)
    if not seq:
        return np.zeros((0, 0)), None, 1
    tags = {c.encoder_tag for c in seq if isinstance(c, (Code, SuperVector))}
    if len(tags) > 1:
        raise ConfigurationError(f"cannot pool codes from different encoders: {sorted(tags)}")
    first = seq[0]
    bdim = first.block_dim if isinstance(first, (Code, SuperVector)) else 1
    arrays = [np.atleast_2d(c.values if isinstance(c, (Code, SuperVector)) else np.asarray(c, float)) for c in seq]
    lengths = {a.shape[1] for a in arrays}
    if len(lengths) > 1:
        raise ShapeError(f"codes have differing lengths {sorted(lengths)}")
    return np.concatenate(arrays, axis=0), (tags.pop() if tags else None), bdim


def pool(codes: Code | SuperVector | Sequence, cfg: PoolNormConfig = PoolNormConfig()) -> np.ndarray:
    """Componentwise sum or max over descriptors.

    Accepts a batched ``Code``/``SuperVector`` or a sequence of per-descriptor
    codes. Each column is summed in sorted order with compensated summation,
    so the result does not depend on descriptor order.
    """
    rows, tag, _ = _rows(codes)
    if rows.shape[0] == 0:
        raise EmptyVideoError("no descriptors to pool")
    if tag is not None:
        cfg.check_encoder(tag)
    if cfg.pooling == "max":
        return rows.max(axis=0)
    return _exact_column_sum(rows)


def _exact_column_sum(rows: np.ndarray) -> np.ndarray:
    if rows.shape[0] == 1:
        return rows[0].astype(np.float64)
    # sorted columns give a canonical summation order
    s = np.sort(rows, axis=0)
    total = np.zeros(rows.shape[1])
    comp = np.zeros(rows.shape[1])
    for r in s:
        y = r - comp
        t = total + y
        comp = (t - total) - y
        total = t
    return total


def _block_normalize(v: np.ndarray, block: int, kind: str) -> np.ndarray:
    if block < 1 or v.shape[0] % block:
        raise ShapeError(f"vector of length {v.shape[0]} does not split into blocks of {block}")
    b = v.reshape(-1, block)
    norms = np.abs(b).sum(axis=1) if kind == "l1" else np.sqrt(np.sum(b * b, axis=1))
    out = b.copy()
    nz = norms > 0
    out[nz] /= norms[nz, None]
    return out.reshape(-1)


def power_normalize(v: np.ndarray, alpha: float) -> np.ndarray:
    return np.sign(v) * np.abs(v) ** alpha


def lp_normalize(v: np.ndarray, kind: str) -> np.ndarray:
    if kind == "none":
        return v
    norm = np.abs(v).sum() if kind == "l1" else np.sqrt(v @ v)
    return v / norm if norm > 0 else v


def normalize(
    p: np.ndarray,
    cfg: PoolNormConfig = PoolNormConfig(),
    block_dim: int = 1,
    **provenance,
) -> VideoRepresentation:
    """Apply power, intra (per ``block_dim`` block) and final normalisation.

    Zero vectors and zero blocks pass through each stage unchanged.
    """
    v = np.asarray(p, dtype=np.float64).copy()
    if not np.all(np.isfinite(v)):
        raise ShapeError("pooled vector contains non-finite entries")

    def power(u):
        return u if cfg.power_alpha is None else power_normalize(u, cfg.power_alpha)

    def intra(u):
        return u if cfg.intra == "off" else _block_normalize(u, block_dim, cfg.intra)

    v = intra(power(v)) if cfg.order == "power-intra" else power(intra(v))
    v = lp_normalize(v, cfg.final_norm)
    return VideoRepresentation(
        vector=v,
        pooling=cfg.pooling,
        normalization=cfg.chain(),
        block_dim=block_dim,
        **provenance,
    )


def represent(
    codes: Code | SuperVector,
    cfg: PoolNormConfig,
    video_id: str = "",
    channel: str = "",
) -> VideoRepresentation:
    """Pool then normalise one video's codes. Empty videos give a zero vector."""
    try:
        pooled = pool(codes, cfg)
    except EmptyVideoError:
        log.warning("video %s/%s has no descriptors; using a zero representation", video_id, channel)
        pooled = np.zeros(codes.values.shape[-1])
    return normalize(
        pooled,
        cfg,
        block_dim=codes.block_dim,
        video_id=video_id,
        encoder_tag=codes.encoder_tag,
        channel=channel,
    )


def hellinger_check(p: np.ndarray, tol: float = 1e-12) -> bool:
    """Check ``sqrt(p)/||sqrt(p)||_2 == sqrt(p/||p||_1)`` componentwise within ``tol``."""
    p = np.asarray(p, dtype=np.float64)
    if np.any(p < 0):
        raise ValueError("Hellinger identity needs a non-negative vector")
    if not np.any(p):
        raise ValueError("Hellinger identity needs a non-zero vector")
    lhs = lp_normalize(power_normalize(p, 0.5), "l2")
    rhs = np.sqrt(p / p.sum())
    return bool(np.max(np.abs(lhs - rhs)) <= tol)
