from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from bovw.codebook import Codebook, GmmModel, gmm_fit
from bovw.encoders import (
    ENCODER_TAGS,
    EncoderSpec,
    LtcProjections,
    SuperVector,
    code_dim,
    encode,
    encode_fv,
    encode_lcc,
    encode_ltc,
    encode_svc,
    encode_vlad,
    fit_ltc_projections,
)
from bovw.encoders.supervector import SuperVectorConfig, ltc_residual_sets
from bovw.errors import ConfigurationError

HARD = SuperVectorConfig()
SOFT_ALL = SuperVectorConfig(assignment="soft-all")


def cb_of(c, priors=None) -> Codebook:
    c = np.asarray(c, dtype=float)
    return Codebook(c, np.full(len(c), 1.0 / len(c)) if priors is None else np.asarray(priors, float))


def test_fv_at_mean():
    g = GmmModel(np.array([1.0]), np.array([[1.0, -1.0, 2.0]]), np.array([[4.0, 1.0, 0.25]]), 1e-6)
    v = encode_fv(g.means[0], g)
    assert np.allclose(v[:3], 0.0)
    assert np.allclose(v[3:], -1 / np.sqrt(2))


def test_fv_one_sigma():
    g = GmmModel(np.array([1.0]), np.array([[1.0, -1.0]]), np.array([[4.0, 0.25]]), 1e-6)
    v = encode_fv(g.means[0] + np.sqrt(g.variances[0]), g)
    assert np.allclose(v, [1, 1, 0, 0])


def test_fv_direct_formula(rng):
    K, D = 3, 4
    g = GmmModel(rng.dirichlet(np.ones(K)), rng.normal(size=(K, D)), rng.uniform(0.5, 2, (K, D)), 1e-6)
    x = rng.normal(size=D)
    # independent evaluation: densities by hand
    logp = np.array([
        np.log(g.weights[k]) - 0.5 * np.sum(np.log(2 * np.pi * g.variances[k]))
        - 0.5 * np.sum((x - g.means[k]) ** 2 / g.variances[k])
        for k in range(K)
    ])
    gamma = np.exp(logp - logp.max())
    gamma /= gamma.sum()
    blocks = []
    for k in range(K):
        sd = np.sqrt(g.variances[k])
        blocks.append(gamma[k] * (x - g.means[k]) / sd / np.sqrt(g.weights[k]))
        blocks.append(gamma[k] * ((x - g.means[k]) ** 2 / g.variances[k] - 1) / np.sqrt(2 * g.weights[k]))
    assert np.allclose(encode_fv(x, g), np.concatenate(blocks), atol=1e-12)


def test_fv_zero_expectation():
    rng = np.random.default_rng(1)
    data = np.concatenate([rng.normal(m, s, size=(3000, 3)) for m, s in [(-3, 1.0), (0, 0.5), (3, 1.5)]])
    g = gmm_fit(data, 3, seed=0, tol=1e-12, max_iters=300)
    x = g.sample(50_000, np.random.default_rng(2))
    mean = encode_fv(x, g).mean(axis=0)
    assert np.max(np.abs(mean)) <= 5 / np.sqrt(50_000)


def test_vlad_hard_zero_residual():
    cb = cb_of([[0, 0], [1, 1]])
    assert np.array_equal(encode_vlad(np.array([1.0, 1.0]), cb), np.zeros(4))


def test_vlad_soft_all_symmetric():
    cb = cb_of([[-1.0, 0.0], [1.0, 0.0]])
    x = np.array([0.0, 2.0])
    v = encode_vlad(x, cb, SOFT_ALL)
    assert np.allclose(v, np.r_[0.5 * (x - cb.centroids[0]), 0.5 * (x - cb.centroids[1])])


def test_vlad_k1_is_hard(rng):
    for _ in range(1000):
        cb = cb_of(rng.normal(size=(6, 3)))
        x = rng.normal(size=3)
        j = int(np.argmin(np.sum((cb.centroids - x) ** 2, axis=1)))
        expect = np.zeros((6, 3))
        expect[j] = x - cb.centroids[j]
        assert np.array_equal(encode_vlad(x, cb, SuperVectorConfig(assignment="soft-k", k=1)), expect.ravel())


def test_vlad_hard_sum_per_cluster(rng):
    cb = cb_of(rng.normal(size=(5, 3)))
    x = rng.normal(size=(300, 3))
    total = encode_vlad(x, cb).sum(axis=0).reshape(5, 3)
    labels = np.argmin(((x[:, None] - cb.centroids[None]) ** 2).sum(-1), axis=1)
    for i in range(5):
        members = x[labels == i]
        assert np.allclose(total[i], members.sum(axis=0) - len(members) * cb.centroids[i], atol=1e-12)


def test_svc_hand_value():
    cb = cb_of([[0.0, 0.0], [3.0, 3.0]], priors=[0.5, 0.5])
    v = encode_svc(np.zeros(2), cb, HARD, n_descriptors=1)
    assert np.allclose(v, [0.1 / np.sqrt(0.5), 0, 0, 0, 0, 0])
    assert v[0] == pytest.approx(0.1414, abs=1e-4)


def test_svc_small_alpha_matches_scaled_vlad(rng):
    cb = cb_of(rng.normal(size=(4, 3)), priors=[0.1, 0.2, 0.3, 0.4])
    x = rng.normal(size=3)
    svc = encode_svc(x, cb, SuperVectorConfig(alpha_balance=1e-300), n_descriptors=7).reshape(4, 4)
    vlad = encode_vlad(x, cb).reshape(4, 3)
    assert np.allclose(svc[:, 0], 0.0)
    assert np.allclose(svc[:, 1:], vlad / (7 * np.sqrt(cb.priors))[:, None])


def test_svc_zero_prior_rejected():
    with pytest.raises(ConfigurationError):
        encode_svc(np.zeros(2), cb_of([[0, 0], [1, 1]], priors=[1.0, 0.0]))


def test_svc_default_alpha():
    assert SuperVectorConfig().alpha_balance == 0.1
    assert EncoderSpec("svc").supervector_config().alpha_balance == 0.1


def test_ltc_exact_subspace(rng):
    D, C = 6, 2
    basis = np.linalg.qr(rng.normal(size=(D, C)))[0]
    res = rng.normal(size=(200, C)) @ basis.T
    proj = fit_ltc_projections([res], C)
    U = proj.bases[0]
    centered = res - res.mean(axis=0)
    assert np.max(np.abs(centered - centered @ U @ U.T)) <= 1e-8
    assert np.allclose(U.T @ U, np.eye(C), atol=1e-10)


def test_ltc_recovers_axes(rng):
    D, C = 5, 2
    axes = np.linalg.qr(rng.normal(size=(D, D)))[0]
    scales = np.array([5.0, 3.0, 0.5, 0.4, 0.3])
    res = (rng.normal(size=(5000, D)) * scales) @ axes.T
    U = fit_ltc_projections([res], C).bases[0]
    # independent eigendecomposition of the sample covariance
    w, V = np.linalg.eigh(np.cov(res, rowvar=False))
    ref = V[:, np.argsort(w)[::-1][:C]]
    for j in range(C):
        angle = np.arccos(min(1.0, abs(float(U[:, j] @ ref[:, j]))))
        assert angle < 0.05


def test_ltc_full_dim_is_rotation(rng):
    D = 4
    res = rng.normal(size=(100, D)) * [3, 2, 1, 0.5]
    U = fit_ltc_projections([res], D).bases[0]
    assert np.allclose(U.T @ U, np.eye(D), atol=1e-10)


def test_ltc_padding_flagged(rng, caplog):
    proj = fit_ltc_projections([rng.normal(size=(1, 4)), rng.normal(size=(50, 4)), np.zeros((0, 4))], 3)
    assert proj.padded.tolist() == [True, False, True]
    assert np.all(proj.bases[2] == 0)


def test_ltc_blocks(rng):
    cb = cb_of(rng.normal(size=(3, 4)))
    proj = LtcProjections(np.tile(np.eye(4)[None], (3, 1, 1)), np.zeros(3, bool))
    codes = np.array([[0.0, 1.0, 0.0]])
    v = encode_ltc(cb.centroids[1], cb, proj, HARD, codes=codes).reshape(3, 5)
    assert np.allclose(v[1], [0.1, 0, 0, 0, 0]) and np.allclose(v[[0, 2]], 0)
    x = rng.normal(size=4)
    s = rng.normal(size=(1, 3))
    v = encode_ltc(x, cb, proj, HARD, codes=s).reshape(3, 5)
    for i in range(3):
        assert np.allclose(v[i, 1:], s[0, i] * (x - cb.centroids[i]), atol=1e-15)


def test_ltc_direct_formula(rng):
    K, D, C = 4, 5, 2
    cb = cb_of(rng.normal(size=(K, D)))
    x = rng.normal(size=(6, D))
    codes = encode_lcc(x, cb)
    proj = fit_ltc_projections(ltc_residual_sets(x, cb, codes), C)
    out = encode_ltc(x, cb, proj, SuperVectorConfig(alpha_balance=0.3), codes=codes)
    for n in range(6):
        ref = np.concatenate([
            np.r_[0.3 * codes[n, i], codes[n, i] * (x[n] - cb.centroids[i]) @ proj.bases[i]] for i in range(K)
        ])
        assert np.allclose(out[n], ref, atol=1e-10)


def test_ltc_needs_projections(rng):
    with pytest.raises(ConfigurationError):
        encode_ltc(np.zeros(2), cb_of([[0, 0], [1, 1]]), None)


def _models(rng, K, D):
    cb = cb_of(rng.normal(size=(K, D)))
    g = GmmModel(np.full(K, 1.0 / K), cb.centroids, np.ones((K, D)), 1e-6)
    return cb, g


@given(st.integers(0, 2**31 - 1), st.integers(1, 12), st.integers(1, 8))
def test_dim_contract(seed, K, D):
    rng = np.random.default_rng(seed)
    cb, g = _models(rng, K, D)
    C = max(1, D // 2)
    proj = LtcProjections(np.tile(np.eye(D)[:, :C], (K, 1, 1)), np.zeros(K, bool))
    x = rng.normal(size=(2, D))
    expected = {"fv": 2 * K * D, "vlad": K * D, "svc": K * (1 + D), "ltc": K * (1 + C)}
    for tag in ENCODER_TAGS:
        if tag in ("sc",) and K < 2:
            continue
        out = encode(EncoderSpec(tag, {"k": min(2, K) if tag == "sc" else min(5, K)}), x, g if tag == "fv" else cb, proj)
        want = expected.get(tag.split("-")[0], K)
        assert out.values.shape == (2, want) == (2, code_dim(tag, K, D, C))
        if isinstance(out, SuperVector):
            assert out.blocks().shape == (2, K, out.block_dim)


@given(st.integers(0, 2**31 - 1), st.integers(2, 10))
def test_soft_k_equals_soft_all(seed, K):
    rng = np.random.default_rng(seed)
    cb = cb_of(rng.normal(size=(K, 3)), priors=rng.dirichlet(np.ones(K)) + 1e-3)
    x = rng.normal(size=(4, 3))
    kK = SuperVectorConfig(assignment="soft-k", k=K)
    assert np.max(np.abs(encode_vlad(x, cb, kK) - encode_vlad(x, cb, SOFT_ALL))) <= 1e-12
    assert np.max(np.abs(encode_svc(x, cb, kK, 4) - encode_svc(x, cb, SOFT_ALL, 4))) <= 1e-12
