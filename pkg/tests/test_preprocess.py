from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from bovw.errors import DegenerateDataError, InsufficientDataError, ShapeError
from bovw.preprocess import (
    DEFAULT_OUTPUT_DIMS,
    CovarianceAccumulator,
    WhitenTransform,
    apply_whiten,
    fit_whiten,
)


def test_diag_covariance_recovered(rng):
    data = rng.normal(size=(10_000, 2)) * np.sqrt([4.0, 1.0]) + [3.0, -2.0]
    t = fit_whiten(data, 2)
    # independent oracle: eigendecomposition of np.cov
    ref = np.sort(np.linalg.eigvalsh(np.cov(data, rowvar=False)))[::-1]
    assert np.allclose(t.eigenvalues, ref, rtol=1e-8)
    assert np.allclose(t.eigenvalues, [4.0, 1.0], atol=0.1)
    out = apply_whiten(t, data)
    assert np.allclose(out.var(axis=0, ddof=1), 1.0, atol=0.05)


def test_identity_covariance_gives_rotation(rng):
    data = rng.normal(size=(10_000, 3))
    t = fit_whiten(data, 3)
    assert np.allclose(t.projection.T @ t.projection, np.eye(3), atol=1e-8)
    out = apply_whiten(t, data)
    assert np.allclose(out.var(axis=0, ddof=1), 1.0, atol=0.05)


def test_whitened_covariance_is_identity(rng):
    A = rng.normal(size=(6, 6))
    data = rng.normal(size=(10_000, 6)) @ A + rng.normal(size=6)
    t = fit_whiten(data, 6)
    cov = np.cov(apply_whiten(t, data), rowvar=False)
    assert np.max(np.abs(cov - np.eye(6))) < 0.05


def test_reduction_396_to_200(rng):
    data = rng.normal(size=(600, 396)) @ rng.normal(size=(396, 396)) * 0.1
    t = fit_whiten(data, 200)
    assert t.projection.shape == (396, 200)
    assert (t.input_dim, t.output_dim) == (396, 200)
    assert np.all(np.diff(t.eigenvalues) <= 0)
    assert apply_whiten(t, data[0]).shape == (200,)


def test_default_output_dims():
    assert DEFAULT_OUTPUT_DIMS["idt"] == 200
    assert DEFAULT_OUTPUT_DIMS["stip"] == 100
    assert DEFAULT_OUTPUT_DIMS["idt/mbhx"] == 48


def test_mean_maps_to_zero(rng):
    data = rng.normal(size=(500, 4)) + 7.0
    t = fit_whiten(data, 3)
    assert np.allclose(apply_whiten(t, t.mean), 0.0, atol=1e-12)


def test_identity_transform():
    t = WhitenTransform(projection=np.eye(3), eigenvalues=np.ones(3), mean=np.zeros(3), eigenvalue_floor=1e-10)
    f = np.array([1.0, -2.0, 0.5])
    assert np.array_equal(apply_whiten(t, f), f)
    assert np.array_equal(t(f), f)


def test_eigenvalue_floor_applied(rng):
    # rank-deficient data: third axis is a copy of the first
    base = rng.normal(size=(200, 2))
    data = np.column_stack([base, base[:, 0]])
    t = fit_whiten(data, 3, eigenvalue_floor=1e-6)
    assert t.eigenvalues.min() >= 1e-6
    assert np.all(np.isfinite(apply_whiten(t, data)))


def test_errors(rng):
    with pytest.raises(InsufficientDataError):
        fit_whiten(rng.normal(size=(3, 5)), 3)
    with pytest.raises(DegenerateDataError):
        fit_whiten(np.ones((50, 3)), 2)
    with pytest.raises(ShapeError):
        fit_whiten(rng.normal(size=(50, 3)), 4)
    t = fit_whiten(rng.normal(size=(50, 3)), 2)
    with pytest.raises(ShapeError):
        apply_whiten(t, np.zeros(4))


def test_accumulator_merge_matches_numpy(rng):
    data = rng.normal(size=(1000, 5)) * [1, 2, 3, 4, 5] + 1e4
    whole = CovarianceAccumulator(5).update(data)
    a = CovarianceAccumulator(5).update(data[:317])
    b = CovarianceAccumulator(5).update(data[317:])
    ref = np.cov(data, rowvar=False)
    tol = 1e-10 * np.abs(ref).max()
    assert np.allclose(whole.covariance(), ref, rtol=0, atol=tol)
    assert np.allclose(a.merge(b).covariance(), ref, rtol=0, atol=tol)


@given(st.integers(0, 2**31 - 1), st.floats(-3, 3), st.floats(-3, 3))
def test_apply_is_affine(seed, a, b):
    rng = np.random.default_rng(seed)
    data = rng.normal(size=(40, 4))
    t = fit_whiten(data, 3)
    f1, f2 = rng.normal(size=4), rng.normal(size=4)
    combo = t.mean + a * (f1 - t.mean) + b * (f2 - t.mean)
    lhs = apply_whiten(t, combo)
    rhs = a * apply_whiten(t, f1) + b * apply_whiten(t, f2)
    assert np.allclose(lhs, rhs, atol=1e-10)


@given(st.integers(0, 2**31 - 1), st.integers(1, 6))
def test_transform_invariants(seed, n_out):
    rng = np.random.default_rng(seed)
    data = rng.normal(size=(30, 6)) @ rng.normal(size=(6, 6))
    t = fit_whiten(data, n_out)
    assert np.allclose(t.projection.T @ t.projection, np.eye(n_out), atol=1e-8)
    assert np.all(np.diff(t.eigenvalues) <= 0)
    assert np.all(t.eigenvalues >= t.eigenvalue_floor)
    assert apply_whiten(t, data).shape == (30, n_out)
