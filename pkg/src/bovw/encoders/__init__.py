"""Encoder registry and the tagged code containers passed on to pooling."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

import numpy as np

from ..codebook import Codebook, GmmModel
from ..errors import ConfigurationError
from .reconstruction import (
    ReconConfig,
    encode_lcc,
    encode_llc,
    encode_llc_exact,
    encode_omp,
    encode_spc,
)
from .supervector import (
    LtcProjections,
    SuperVectorConfig,
    encode_fv,
    encode_ltc,
    encode_svc,
    encode_vlad,
    fit_ltc_projections,
)
from .voting import VotingConfig, encode_gsc, encode_sa, encode_sc, encode_vq

VOTING = ("vq", "sa", "sa-k", "sc", "gsc")
RECONSTRUCTION = ("omp", "spc", "lcc", "llc", "llc-exact")
SUPERVECTOR = ("fv", "vlad", "vlad-k", "vlad-all", "svc", "svc-k", "svc-all", "ltc")
ENCODER_TAGS = VOTING + RECONSTRUCTION + SUPERVECTOR

_ASSIGNMENT = {"": "hard", "-k": "soft-k", "-all": "soft-all"}


def family(tag: str) -> str:
    if tag in VOTING:
        return "voting"
    if tag in RECONSTRUCTION:
        return "reconstruction"
    if tag in SUPERVECTOR:
        return "supervector"
    raise ConfigurationError(f"unknown encoder {tag!r}; expected one of {ENCODER_TAGS}")


def model_kind(tag: str) -> str:
    """Which fitted model an encoder consumes: ``"gmm"`` for FV, ``"kmeans"`` otherwise."""
    family(tag)
    return "gmm" if tag == "fv" else "kmeans"


def is_supervector(tag: str) -> bool:
    return family(tag) == "supervector"


def block_dim(tag: str, D: int, C: int | None = None) -> int:
    """Width of one per-codeword block; 1 for the K-dimensional encoders."""
    if tag == "fv":
        return 2 * D
    if tag.startswith("vlad"):
        return D
    if tag.startswith("svc"):
        return 1 + D
    if tag == "ltc":
        if C is None:
            raise ConfigurationError("LTC block width needs the intrinsic dimension C")
        return 1 + C
    family(tag)
    return 1


def code_dim(tag: str, K: int, D: int, C: int | None = None) -> int:
    """Output length: K, 2KD, KD, K(1+D) or K(1+C)."""
    return K * block_dim(tag, D, C)


@dataclass(frozen=True)
class Code:
    """Per-descriptor codes of a K-dimensional encoder, one row per descriptor."""

    values: np.ndarray
    encoder_tag: str

    @property
    def nnz(self) -> np.ndarray:
        return np.count_nonzero(self.values, axis=-1)

    @property
    def n_blocks(self) -> int:
        return self.values.shape[-1]

    block_dim = 1


@dataclass(frozen=True)
class SuperVector:
    """Per-descriptor super vectors laid out as ``n_blocks`` blocks of ``block_dim``."""

    values: np.ndarray
    encoder_tag: str
    n_blocks: int
    block_dim: int

    def __post_init__(self):
        if self.values.shape[-1] != self.n_blocks * self.block_dim:
            raise ConfigurationError(
                f"{self.encoder_tag}: length {self.values.shape[-1]} != {self.n_blocks}x{self.block_dim}"
            )

    def blocks(self) -> np.ndarray:
        return self.values.reshape(*self.values.shape[:-1], self.n_blocks, self.block_dim)


@dataclass(frozen=True)
class EncoderSpec:
    """An encoder tag plus its parameter overrides (beta, k, lam, alpha, ...)."""

    tag: str
    params: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        family(self.tag)

    def voting_config(self) -> VotingConfig:
        p = self.params
        return VotingConfig(beta=p.get("beta", 1.0), k=p.get("k", 5))

    def recon_config(self) -> ReconConfig:
        p = self.params
        defaults = ReconConfig()
        return ReconConfig(
            lam=p.get("lam", defaults.lam),
            k=p.get("k", defaults.k),
            sigma=p.get("sigma", defaults.sigma),
            max_solver_iters=p.get("max_solver_iters", defaults.max_solver_iters),
            solver_tol=p.get("solver_tol", defaults.solver_tol),
            ridge=p.get("ridge", defaults.ridge),
        )

    def supervector_config(self) -> SuperVectorConfig:
        p = self.params
        suffix = self.tag[self.tag.find("-"):] if "-" in self.tag else ""
        return SuperVectorConfig(
            assignment=_ASSIGNMENT.get(suffix, "hard"),
            k=p.get("k", 5),
            alpha_balance=p.get("alpha", 0.1),
            beta=p.get("beta", 1.0),
            ltc_intrinsic_dim=p.get("ltc_dim"),
        )


def encode(
    spec: EncoderSpec | str,
    x: np.ndarray,
    model: Codebook | GmmModel,
    projections: LtcProjections | None = None,
) -> Code | SuperVector:
    """Encode every row of ``x`` (one video's descriptors) with ``spec``."""
    if isinstance(spec, str):
        spec = EncoderSpec(spec)
    tag = spec.tag
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if model_kind(tag) == "gmm" and not isinstance(model, GmmModel):
        raise ConfigurationError("FV needs a GMM")
    if model_kind(tag) == "kmeans" and not isinstance(model, Codebook):
        raise ConfigurationError(f"{tag} needs a k-means codebook")

    if tag == "vq":
        return Code(encode_vq(x, model), tag)
    if tag in ("sa", "sa-k"):
        return Code(encode_sa(x, model, spec.voting_config(), localized=tag == "sa-k"), tag)
    if tag == "sc":
        return Code(encode_sc(x, model, spec.voting_config()), tag)
    if tag == "gsc":
        return Code(encode_gsc(x, model, spec.voting_config()), tag)
    if tag in RECONSTRUCTION:
        fn = {
            "omp": encode_omp,
            "spc": encode_spc,
            "lcc": encode_lcc,
            "llc": encode_llc,
            "llc-exact": encode_llc_exact,
        }[tag]
        return Code(fn(x, model, spec.recon_config()), tag)

    K, D = model.size, model.dim
    if tag == "fv":
        return SuperVector(encode_fv(x, model), tag, K, 2 * D)
    cfg = spec.supervector_config()
    if tag.startswith("vlad"):
        return SuperVector(encode_vlad(x, model, cfg), tag, K, D)
    if tag.startswith("svc"):
        return SuperVector(encode_svc(x, model, cfg, n_descriptors=len(x)), tag, K, 1 + D)
    codes = encode_lcc(x, model, spec.recon_config())
    out = encode_ltc(x, model, projections, cfg, codes=codes)
    return SuperVector(out, tag, K, 1 + projections.intrinsic_dim)


__all__ = [
    "Code",
    "SuperVector",
    "EncoderSpec",
    "VotingConfig",
    "ReconConfig",
    "SuperVectorConfig",
    "LtcProjections",
    "ENCODER_TAGS",
    "encode",
    "code_dim",
    "block_dim",
    "family",
    "model_kind",
    "is_supervector",
    "encode_vq",
    "encode_sa",
    "encode_sc",
    "encode_gsc",
    "encode_omp",
    "encode_spc",
    "encode_lcc",
    "encode_llc",
    "encode_llc_exact",
    "encode_fv",
    "encode_vlad",
    "encode_svc",
    "encode_ltc",
    "fit_ltc_projections",
]
