"""Combining descriptor channels at the descriptor, representation or score level."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .aggregate import PoolNormConfig, VideoRepresentation, default_poolnorm, represent
from .codebook import Codebook, GmmModel
from .encoders import Code, EncoderSpec, LtcProjections, SuperVector, block_dim, code_dim, encode, model_kind
from .errors import AlignmentError, ConfigurationError
from .preprocess import WhitenTransform, apply_whiten

LEVELS = ("descriptor", "representation", "score")
SCORE_MEANS = ("arithmetic", "geometric")
IDT_CHANNELS = ("hog", "hof", "mbhx", "mbhy")


@dataclass(frozen=True)
class FusionStrategy:
    level: str = "representation"
    channels: tuple[str, ...] = ()
    score_mean: str = "geometric"

    def __post_init__(self):
        if self.level not in LEVELS:
            raise ConfigurationError(f"fusion level must be one of {LEVELS}")
        if self.score_mean not in SCORE_MEANS:
            raise ConfigurationError(f"score mean must be one of {SCORE_MEANS}")
        if not self.channels:
            raise ConfigurationError("fusion needs at least one channel")


def fuse_descriptor_level(channels: Mapping[str, np.ndarray] | Sequence[tuple[str, np.ndarray]]) -> np.ndarray:
    """Concatenate per-cuboid descriptors of several channels, in the given order."""
    items = list(channels.items()) if isinstance(channels, Mapping) else list(channels)
    if not items:
        raise ConfigurationError("no channels to fuse")
    n = len(items[0][1])
    for name, arr in items:
        if len(arr) != n:
            raise AlignmentError(f"channel {name!r} has {len(arr)} descriptors, expected {n}")
    if len(items) == 1:
        return np.asarray(items[0][1])
    return np.concatenate([np.atleast_2d(np.asarray(a)) for _, a in items], axis=1)


def fuse_representation_level(reps: Sequence[VideoRepresentation]) -> VideoRepresentation:
    """Concatenate per-channel (or per-encoder) representations of one video.

    No renormalisation happens afterwards: each part keeps its own norm, so the
    linear kernel of fused vectors is the sum of the per-part kernels.
    """
    if not reps:
        raise ConfigurationError("no representations to fuse")
    if len(reps) == 1:
        return reps[0]
    keys = [(r.channel, r.encoder_tag) for r in reps]
    if len(set(keys)) != len(keys):
        raise ConfigurationError(f"duplicate (channel, encoder) in fusion: {keys}")
    videos = {r.video_id for r in reps}
    if len(videos) > 1:
        raise ConfigurationError(f"representations from different videos: {sorted(videos)}")
    parts = []
    for r in reps:
        parts.extend(r.parts or ((r.channel, r.encoder_tag, r.dim),))
    return VideoRepresentation(
        vector=np.concatenate([r.vector for r in reps]),
        video_id=reps[0].video_id,
        encoder_tag="+".join(dict.fromkeys(r.encoder_tag for r in reps)),
        channel="+".join(dict.fromkeys(r.channel for r in reps)),
        pooling="+".join(dict.fromkeys(r.pooling for r in reps)),
        normalization=reps[0].normalization,
        block_dim=1,
        parts=tuple(parts),
    )


def log_sigmoid(x: np.ndarray) -> np.ndarray:
    return -np.logaddexp(0.0, -x)


def fuse_score_level(score_rows: Sequence[np.ndarray] | np.ndarray, strategy: FusionStrategy | str = "geometric") -> np.ndarray:
    """Average per-channel score vectors.

    The geometric mean is taken over logistic-mapped scores so that negative
    SVM margins are admissible. Works on 1-D score vectors or on
    ``(n_videos, n_classes)`` score matrices per channel.
    """
    mean = strategy.score_mean if isinstance(strategy, FusionStrategy) else strategy
    if mean not in SCORE_MEANS:
        raise ConfigurationError(f"score mean must be one of {SCORE_MEANS}")
    rows = np.stack([np.asarray(r, dtype=np.float64) for r in score_rows])
    if mean == "arithmetic":
        return rows.mean(axis=0)
    return np.exp(log_sigmoid(rows).mean(axis=0))


@dataclass
class ChannelModels:
    """Fitted models for one descriptor channel."""

    whiten: WhitenTransform | None = None
    kmeans: dict[str, Codebook] = field(default_factory=dict)
    gmm: GmmModel | None = None
    ltc: LtcProjections | None = None

    def model_for(self, spec: EncoderSpec, codebook_key: str = "kmeans"):
        if model_kind(spec.tag) == "gmm":
            return self.gmm
        return self.kmeans.get(codebook_key)


@dataclass(frozen=True)
class HybridSpec:
    """Which (encoder, channel) outputs are concatenated into one representation."""

    encoders: tuple[EncoderSpec, ...] = (EncoderSpec("fv"), EncoderSpec("svc-k"))
    channels: tuple[str, ...] = IDT_CHANNELS
    poolnorm: PoolNormConfig = PoolNormConfig(pooling="sum", power_alpha=0.5, intra="l2", final_norm="l2")
    codebook_keys: tuple[str, ...] = ()

    def __post_init__(self):
        if len(self.encoders) * len(self.channels) < 1:
            raise ConfigurationError("hybrid needs at least one encoder and one channel")


def encode_video(
    descriptors: np.ndarray,
    spec: EncoderSpec,
    models: ChannelModels,
    poolnorm: PoolNormConfig | None = None,
    video_id: str = "",
    channel: str = "",
    codebook_key: str = "kmeans",
) -> VideoRepresentation:
    """Whiten, encode, pool and normalise one video's descriptors for one channel."""
    model = models.model_for(spec, codebook_key)
    if model is None:
        raise ConfigurationError(f"no {model_kind(spec.tag)} model for encoder {spec.tag!r} on channel {channel!r}")
    cfg = poolnorm if poolnorm is not None else default_poolnorm(spec.tag)
    cfg.check_encoder(spec.tag)
    x = np.atleast_2d(np.asarray(descriptors, dtype=np.float64))
    if models.whiten is not None and len(x):
        x = apply_whiten(models.whiten, x)
    if len(x) == 0:
        C = models.ltc.intrinsic_dim if models.ltc is not None else None
        width = code_dim(spec.tag, model.size, model.dim, C)
        bd = block_dim(spec.tag, model.dim, C)
        empty = np.zeros((0, width))
        codes = Code(empty, spec.tag) if bd == 1 else SuperVector(empty, spec.tag, model.size, bd)
    else:
        codes = encode(spec, x, model, projections=models.ltc)
    return represent(codes, cfg, video_id=video_id, channel=channel)


def build_hybrid(
    spec: HybridSpec,
    video_descriptors: Mapping[str, np.ndarray],
    models: Mapping[str, ChannelModels],
    video_id: str = "",
) -> VideoRepresentation:
    """Encode every (channel, encoder) pair and concatenate the normalised parts."""
    keys = spec.codebook_keys or ("kmeans",) * len(spec.encoders)
    # check every pair before encoding anything
    for channel in spec.channels:
        if channel not in models:
            raise ConfigurationError(f"no fitted models for channel {channel!r}")
        if channel not in video_descriptors:
            raise ConfigurationError(f"video {video_id!r} has no descriptors for channel {channel!r}")
        for enc, key in zip(spec.encoders, keys):
            if models[channel].model_for(enc, key) is None:
                raise ConfigurationError(f"missing model for ({enc.tag}, {channel})")
    parts = []
    for channel in spec.channels:
        for enc, key in zip(spec.encoders, keys):
            parts.append(
                encode_video(
                    video_descriptors[channel], enc, models[channel], spec.poolnorm,
                    video_id=video_id, channel=channel, codebook_key=key,
                )
            )
    return fuse_representation_level(parts)
