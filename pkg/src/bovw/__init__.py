"""Bag-of-visual-words encoders, pooling, fusion and a reproducible experiment pipeline."""

from .aggregate import PoolNormConfig, VideoRepresentation, hellinger_check, normalize, pool, represent
from .classifier import LinearOvrModel, evaluate, predict, predict_scores, train_ovr
from .codebook import Codebook, GmmModel, gmm_fit, kmeans_fit, posterior
from .encoders import Code, EncoderSpec, SuperVector, code_dim, encode
from .errors import (
    AlignmentError,
    BovwError,
    ConfigurationError,
    DegenerateDataError,
    EmptyVideoError,
    FormatError,
    InsufficientDataError,
    ManifestError,
    ShapeError,
)
from .fusion import FusionStrategy, HybridSpec, build_hybrid, fuse_representation_level, fuse_score_level
from .preprocess import WhitenTransform, apply_whiten, fit_whiten

__version__ = "0.1.0"

__all__ = [
    "AlignmentError",
    "BovwError",
    "Code",
    "Codebook",
    "ConfigurationError",
    "DegenerateDataError",
    "EmptyVideoError",
    "EncoderSpec",
    "FormatError",
    "FusionStrategy",
    "GmmModel",
    "HybridSpec",
    "InsufficientDataError",
    "LinearOvrModel",
    "ManifestError",
    "PoolNormConfig",
    "ShapeError",
    "SuperVector",
    "VideoRepresentation",
    "WhitenTransform",
    "apply_whiten",
    "build_hybrid",
    "code_dim",
    "encode",
    "evaluate",
    "fit_whiten",
    "fuse_representation_level",
    "fuse_score_level",
    "gmm_fit",
    "hellinger_check",
    "kmeans_fit",
    "normalize",
    "pool",
    "posterior",
    "predict",
    "predict_scores",
    "represent",
    "train_ovr",
]
