from __future__ import annotations

import cvxpy as cp
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from bovw.codebook import Codebook
from bovw.encoders import encode_lcc, encode_llc, encode_llc_exact, encode_omp, encode_spc, encode_vq
from bovw.encoders.reconstruction import (
    ReconConfig,
    affine_weighted_shrink,
    lcc_objective,
    omp,
    solve_lcc,
    solve_spc,
    spc_objective,
)


def unit_cb(rng, K, D) -> Codebook:
    c = rng.normal(size=(K, D))
    c /= np.linalg.norm(c, axis=1, keepdims=True)
    return Codebook(c, np.full(K, 1.0 / K))


def cvx_spc(x, cb, lam):
    s = cp.Variable(cb.size)
    prob = cp.Problem(cp.Minimize(cp.sum_squares(x - cb.centroids.T @ s) + lam * cp.norm1(s)))
    prob.solve(solver=cp.CLARABEL)
    return s.value


# OMP


def test_omp_exact_atom(rng):
    cb = unit_cb(rng, 10, 6)
    s = encode_omp(cb.centroids[3], cb, ReconConfig(k=3))
    assert np.allclose(s, np.eye(10)[3], atol=1e-12)


def test_omp_single_atom_bruteforce(rng):
    for _ in range(500):
        cb = Codebook(rng.normal(size=(12, 5)), np.full(12, 1 / 12))
        x = rng.normal(size=5)
        s = encode_omp(x, cb, ReconConfig(k=1))
        # exhaustive scan of every single-atom least-squares fit
        fits = [(np.sum((x - (d @ x) / (d @ d) * d) ** 2), j) for j, d in enumerate(cb.centroids)]
        _, j = min(fits)
        d = cb.centroids[j]
        assert np.flatnonzero(s).tolist() == [j]
        assert s[j] == pytest.approx((d @ x) / (d @ d), rel=1e-10)


def test_omp_complete_basis(rng):
    cb = Codebook(rng.normal(size=(6, 6)), np.full(6, 1 / 6))
    x = rng.normal(size=6)
    s = encode_omp(x, cb, ReconConfig(k=6, solver_tol=0.0))
    assert np.linalg.norm(x - cb.centroids.T @ s) <= 1e-8


def test_omp_residual_strictly_decreases(rng):
    cb = Codebook(rng.normal(size=(20, 8)), np.full(20, 0.05))
    _, hist = omp(rng.normal(size=8), cb.centroids, 6, 0.0)
    assert np.all(np.diff(hist) < 0)


def test_omp_rank_deficient_stops(rng):
    d = rng.normal(size=3)
    cb = Codebook(np.stack([d, 2 * d, -d]), np.full(3, 1 / 3))
    s = encode_omp(rng.normal(size=3), cb, ReconConfig(k=3))
    assert np.count_nonzero(s) == 1


# SPC


def test_spc_deadzone(rng):
    cb = unit_cb(rng, 8, 4)
    x = rng.normal(size=4)
    lam = 2 * np.max(np.abs(cb.centroids @ x)) + 1e-9
    assert np.array_equal(encode_spc(x, cb, ReconConfig(lam=lam)), np.zeros(8))


def test_spc_exact_atom_dominant(rng):
    for _ in range(100):
        cb = unit_cb(rng, 8, 16)
        x = cb.centroids[2]
        s = encode_spc(x, cb, ReconConfig(lam=0.05))
        others = np.delete(np.abs(s), 2)
        assert s[2] > 10 * others.max()
        ref = cvx_spc(x, cb, 0.05)
        assert spc_objective(x, cb, s, 0.05) <= spc_objective(x, cb, ref, 0.05) + 1e-6


def test_spc_matches_convex_solver(rng):
    for _ in range(30):
        K, D = int(rng.integers(2, 33)), int(rng.integers(2, 17))
        cb = unit_cb(rng, K, D)
        x = rng.normal(size=D)
        res = solve_spc(x, cb)
        ref = cvx_spc(x, cb, 0.15)
        assert abs(res.objective - spc_objective(x, cb, ref, 0.15)) <= 1e-6
        assert res.objective <= spc_objective(x, cb, np.zeros(K), 0.15) + 1e-12


def test_spc_history_monotone(rng):
    cb = unit_cb(rng, 20, 10)
    res = solve_spc(rng.normal(size=10), cb, ReconConfig(lam=0.01))
    h = np.array(res.history)
    assert np.all(np.diff(h) <= 1e-9 * np.maximum(1.0, np.abs(h[:-1])))


def test_spc_nonconvergence_flag(rng):
    cb = unit_cb(rng, 30, 10)
    res = solve_spc(rng.normal(size=10), cb, ReconConfig(lam=1e-4, max_solver_iters=2, solver_tol=1e-16))
    assert res.converged is False
    assert np.all(np.isfinite(res.code))


# LCC


def test_lcc_exact_atom(rng):
    cb = unit_cb(rng, 8, 5)
    s = encode_lcc(cb.centroids[4], cb, ReconConfig(lam=0.01))
    assert np.allclose(s, np.eye(8)[4], atol=1e-8)


def test_lcc_uniform_distance_matches_constrained_spc():
    # codewords on a sphere around x: every locality weight is the same radius.
    # K <= D keeps the problem strictly convex so the minimiser is unique.
    rng = np.random.default_rng(3)
    for _ in range(10):
        K, D = 4, 6
        c = rng.normal(size=(K, D))
        c /= np.linalg.norm(c, axis=1, keepdims=True)
        x = rng.normal(size=D)
        cb = Codebook(x + 1.5 * c, np.full(K, 1 / K))
        lam = 0.2
        res = solve_lcc(x, cb, ReconConfig(lam=lam))
        s = cp.Variable(K)
        prob = cp.Problem(
            cp.Minimize(cp.sum_squares(x - cb.centroids.T @ s) + lam * 1.5 * cp.norm1(s)),
            [cp.sum(s) == 1],
        )
        prob.solve(solver=cp.CLARABEL)
        assert abs(res.objective - prob.value) <= 1e-6
        assert np.allclose(res.code, s.value, atol=1e-6)


def test_lcc_matches_convex_solver(rng):
    for _ in range(20):
        K, D = int(rng.integers(2, 16)), int(rng.integers(2, 8))
        cb = Codebook(rng.normal(size=(K, D)), np.full(K, 1 / K))
        x = rng.normal(size=D)
        res = solve_lcc(x, cb)
        e = np.linalg.norm(cb.centroids - x, axis=1)
        s = cp.Variable(K)
        prob = cp.Problem(
            cp.Minimize(cp.sum_squares(x - cb.centroids.T @ s) + 0.15 * e @ cp.abs(s)),
            [cp.sum(s) == 1],
        )
        prob.solve(solver=cp.CLARABEL)
        assert abs(res.objective - prob.value) <= 1e-6
        assert res.code.sum() == pytest.approx(1.0, abs=1e-10)
        h = np.array(res.history)
        assert np.all(np.diff(h) <= 1e-9 * np.maximum(1.0, np.abs(h[:-1])))


def test_affine_shrink_is_exact_prox(rng):
    # the prox of tau|s| + indicator(sum s = 1) checked against a convex solver
    for _ in range(20):
        v = rng.normal(size=7)
        tau = rng.uniform(0, 1, size=7)
        out = affine_weighted_shrink(v, tau)
        s = cp.Variable(7)
        cp.Problem(cp.Minimize(0.5 * cp.sum_squares(s - v) + tau @ cp.abs(s)), [cp.sum(s) == 1]).solve(
            solver=cp.CLARABEL
        )
        assert out.sum() == pytest.approx(1.0, abs=1e-12)
        assert np.allclose(out, s.value, atol=1e-6)


# LLC


def llc_dense_oracle(x, cb, k, ridge):
    idx = np.argsort(np.sum((cb.centroids - x) ** 2, axis=1), kind="stable")[:k]
    Z = cb.centroids[idx] - x
    C = Z @ Z.T
    C += ridge * np.trace(C) * np.eye(k)
    # KKT system of min w'Cw s.t. 1'w = 1
    A = np.block([[2 * C, np.ones((k, 1))], [np.ones((1, k)), np.zeros((1, 1))]])
    sol = np.linalg.solve(A, np.r_[np.zeros(k), 1.0])
    out = np.zeros(cb.size)
    out[idx] = sol[:k]
    return out


def test_llc_matches_kkt_oracle(rng):
    for _ in range(500):
        cb = Codebook(rng.normal(size=(16, 6)), np.full(16, 1 / 16))
        x = rng.normal(size=6)
        assert np.allclose(encode_llc(x, cb), llc_dense_oracle(x, cb, 5, 1e-4), atol=1e-8)


def test_llc_exact_atom_and_k1(rng):
    cb = Codebook(rng.normal(size=(10, 4)), np.full(10, 0.1))
    assert np.allclose(encode_llc(cb.centroids[7], cb), np.eye(10)[7], atol=1e-10)
    x = rng.normal(size=(50, 4))
    assert np.array_equal(encode_llc(x, cb, ReconConfig(k=1)), encode_vq(x, cb))


def test_llc_exact_reference_path(rng):
    cb = Codebook(rng.normal(size=(6, 3)), np.full(6, 1 / 6))
    x = rng.normal(size=3)
    cfg = ReconConfig(lam=0.1, sigma=2.0)
    s = encode_llc_exact(x, cb, cfg)
    e = np.exp(np.linalg.norm(cb.centroids - x, axis=1) / cfg.sigma)
    v = cp.Variable(6)
    prob = cp.Problem(
        cp.Minimize(cp.sum_squares(x - cb.centroids.T @ v) + cfg.lam * cp.sum_squares(cp.multiply(e, v))),
        [cp.sum(v) == 1],
    )
    prob.solve(solver=cp.CLARABEL)
    assert np.allclose(s, v.value, atol=1e-5)
    assert s.sum() == pytest.approx(1.0, abs=1e-10)


@given(st.integers(0, 2**31 - 1), st.floats(0.1, 100.0))
def test_scaling_keeps_supports(seed, c):
    rng = np.random.default_rng(seed)
    cb = Codebook(rng.normal(size=(9, 3)), np.full(9, 1 / 9))
    scaled = Codebook(c * cb.centroids, cb.priors)
    x = rng.normal(size=(5, 3))
    assert np.array_equal(encode_vq(x, cb) != 0, encode_vq(c * x, scaled) != 0)
    assert np.array_equal(encode_llc(x, cb) != 0, encode_llc(c * x, scaled) != 0)


@given(st.integers(0, 2**31 - 1), st.integers(1, 10))
def test_sum_to_one_and_sparsity(seed, k):
    rng = np.random.default_rng(seed)
    cb = Codebook(rng.normal(size=(10, 4)), np.full(10, 0.1))
    x = rng.normal(size=(3, 4))
    cfg = ReconConfig(k=k)
    llc = encode_llc(x, cb, cfg)
    assert np.allclose(llc.sum(axis=1), 1.0, atol=1e-10)
    assert np.all(np.count_nonzero(llc, axis=1) <= k)
    assert np.all(np.count_nonzero(encode_omp(x, cb, cfg), axis=1) <= k)
    assert np.allclose(encode_lcc(x, cb, cfg).sum(axis=1), 1.0, atol=1e-10)


def test_lcc_objective_helper(rng):
    cb = Codebook(rng.normal(size=(4, 2)), np.full(4, 0.25))
    x = rng.normal(size=2)
    s = np.array([0.5, 0.5, 0.0, 0.0])
    r = x - 0.5 * (cb.centroids[0] + cb.centroids[1])
    e = np.linalg.norm(cb.centroids - x, axis=1)
    assert lcc_objective(x, cb, s, 0.3) == pytest.approx(r @ r + 0.3 * 0.5 * (e[0] + e[1]))
