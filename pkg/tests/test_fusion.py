from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from bovw.aggregate import PoolNormConfig, VideoRepresentation
from bovw.codebook import Codebook, gmm_fit, kmeans_fit
from bovw.encoders import EncoderSpec
from bovw.errors import AlignmentError, ConfigurationError
from bovw.fusion import (
    ChannelModels,
    FusionStrategy,
    HybridSpec,
    build_hybrid,
    encode_video,
    fuse_descriptor_level,
    fuse_representation_level,
    fuse_score_level,
)
from bovw.preprocess import apply_whiten, fit_whiten


def rep(vec, channel="A", tag="fv", vid="v"):
    return VideoRepresentation(np.asarray(vec, float), video_id=vid, encoder_tag=tag, channel=channel)


def test_descriptor_level(rng):
    a, b = rng.normal(size=(10, 96)), rng.normal(size=(10, 108))
    assert fuse_descriptor_level({"hog": a, "hof": b}).shape == (10, 204)
    assert fuse_descriptor_level([("hog", a)]) is a or np.array_equal(fuse_descriptor_level([("hog", a)]), a)
    with pytest.raises(AlignmentError, match="hof"):
        fuse_descriptor_level([("hog", a), ("hof", b[:9])])


def test_descriptor_level_then_whiten(rng):
    parts = [(n, rng.normal(size=(500, d))) for n, d in [("hog", 96), ("hof", 108), ("mbhx", 96), ("mbhy", 96)]]
    fused = fuse_descriptor_level(parts)
    assert fused.shape[1] == 396
    t = fit_whiten(fused, 200)
    assert apply_whiten(t, fused).shape == (500, 200)


def test_representation_level(rng):
    a = rep(rng.normal(size=100))
    a = rep(a.vector / np.linalg.norm(a.vector))
    b = rep(rng.normal(size=200), channel="B")
    b = rep(b.vector / np.linalg.norm(b.vector), channel="B")
    f = fuse_representation_level([a, b])
    assert f.dim == 300
    assert np.linalg.norm(f.vector[:100]) == pytest.approx(1.0)
    assert np.linalg.norm(f.vector[100:]) == pytest.approx(1.0)
    assert [p[0] for p in f.parts] == ["A", "B"]
    assert fuse_representation_level([a]) is a


def test_representation_level_errors(rng):
    a = rep(rng.normal(size=3))
    with pytest.raises(ConfigurationError):
        fuse_representation_level([a, a])
    with pytest.raises(ConfigurationError):
        fuse_representation_level([a, rep(rng.normal(size=3), channel="B", vid="other")])


@given(st.integers(0, 2**31 - 1))
def test_kernel_additivity_and_associativity(seed):
    rng = np.random.default_rng(seed)
    xs = [rep(rng.normal(size=5), "A"), rep(rng.normal(size=7), "B"), rep(rng.normal(size=2), "C")]
    ys = [rep(rng.normal(size=5), "A"), rep(rng.normal(size=7), "B"), rep(rng.normal(size=2), "C")]
    fx, fy = fuse_representation_level(xs), fuse_representation_level(ys)
    assert fx.vector @ fy.vector == pytest.approx(sum(a.vector @ b.vector for a, b in zip(xs, ys)), rel=1e-12, abs=1e-12)
    nested = fuse_representation_level([fuse_representation_level(xs[:2]), xs[2]])
    assert np.array_equal(nested.vector, fx.vector)


def test_score_level():
    rows = [np.array([0.2, -1.0, 3.0])] * 3
    assert np.allclose(fuse_score_level(rows, "arithmetic"), rows[0])
    sig = 1 / (1 + np.exp(-rows[0]))
    assert np.allclose(fuse_score_level(rows, "geometric"), sig)
    assert np.allclose(fuse_score_level([np.array([1.0, 3.0]), np.array([3.0, 1.0])], "arithmetic"), [2, 2])


def test_geometric_preserves_confident_channel():
    neutral = np.array([0.0, 0.0, 0.0])
    confident = np.array([-4.0, 6.0, 0.5])
    fused = fuse_score_level([neutral, confident], FusionStrategy(channels=("A", "B")))
    # direct evaluation of sqrt(sigmoid(a) * sigmoid(b))
    sig = lambda v: 1 / (1 + np.exp(-v))
    assert np.allclose(fused, np.sqrt(sig(neutral) * sig(confident)), atol=1e-15)
    assert int(np.argmax(fused)) == 1


def test_geometric_extreme_scores_finite():
    fused = fuse_score_level([np.array([-1e4, 1e4]), np.array([-800.0, 0.0])], "geometric")
    assert np.all(np.isfinite(fused)) and int(np.argmax(fused)) == 1


def test_strategy_validation():
    with pytest.raises(ConfigurationError):
        FusionStrategy(level="kernel", channels=("A",))
    with pytest.raises(ConfigurationError):
        FusionStrategy(channels=())


@pytest.fixture(scope="module")
def small_models():
    rng = np.random.default_rng(0)
    out = {}
    for ch in ("hog", "hof"):
        data = rng.normal(size=(600, 5)) * [1, 2, 3, 1, 1]
        w = fit_whiten(data, 5)
        x = apply_whiten(w, data)
        out[ch] = ChannelModels(whiten=w, kmeans={"kmeans": kmeans_fit(x, 6, seed=0)}, gmm=gmm_fit(x, 3, seed=0))
    return out


def test_single_part_hybrid_equals_plain(small_models, rng):
    x = rng.normal(size=(30, 5))
    spec = HybridSpec(encoders=(EncoderSpec("fv"),), channels=("hog",))
    h = build_hybrid(spec, {"hog": x}, small_models, video_id="v")
    plain = encode_video(x, EncoderSpec("fv"), small_models["hog"], spec.poolnorm, video_id="v", channel="hog")
    assert np.array_equal(h.vector, plain.vector)


def test_hybrid_dims(small_models, rng):
    x = {"hog": rng.normal(size=(30, 5)), "hof": rng.normal(size=(30, 5))}
    spec = HybridSpec(channels=("hog", "hof"))
    h = build_hybrid(spec, x, small_models)
    K_g, K_k, D = 3, 6, 5
    assert h.dim == 2 * (2 * K_g * D + K_k * (1 + D))
    # each part keeps unit norm
    off = 0
    for _, _, n in h.parts:
        assert np.linalg.norm(h.vector[off:off + n]) == pytest.approx(1.0)
        off += n


def test_hybrid_missing_model(small_models, rng):
    models = dict(small_models)
    models["hof"] = ChannelModels(whiten=models["hof"].whiten, kmeans=models["hof"].kmeans)
    with pytest.raises(ConfigurationError, match="fv"):
        build_hybrid(HybridSpec(channels=("hog", "hof")), {"hog": rng.normal(size=(3, 5)), "hof": rng.normal(size=(3, 5))}, models)


def test_encode_video_empty(small_models):
    r = encode_video(np.zeros((0, 5)), EncoderSpec("svc-k"), small_models["hog"], PoolNormConfig())
    assert r.dim == 6 * 6 and not np.any(r.vector)


def test_hybrid_default_spec():
    spec = HybridSpec()
    assert [e.tag for e in spec.encoders] == ["fv", "svc-k"]
    assert spec.channels == ("hog", "hof", "mbhx", "mbhy")
    assert spec.poolnorm.intra == "l2" and spec.poolnorm.power_alpha == 0.5
    assert isinstance(Codebook, type)
