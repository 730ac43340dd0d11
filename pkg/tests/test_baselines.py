import numpy as np
import pytest
from hypothesis import given, strategies as st

from tsd.baselines import fit_ridge, fit_stacked, nmf, ridge


def test_nmf_rank_one():
    rng = np.random.default_rng(0)
    X = np.outer(rng.uniform(0.5, 2, 20), rng.uniform(0.5, 2, 8))
    res = nmf(X, 1, max_iters=2000, tol=1e-12)
    assert np.linalg.norm(X - res.A @ res.D) / np.linalg.norm(X) <= 1e-3


def test_nmf_zero_matrix():
    res = nmf(np.zeros((5, 4)), 2)
    np.testing.assert_array_equal(res.A @ res.D, 0)


@given(st.integers(0, 10_000))
def test_nmf_monotone_and_nonnegative(seed):
    rng = np.random.default_rng(seed)
    X = rng.uniform(size=(15, 6))
    res = nmf(X, 3, max_iters=200, tol=0, seed=seed)
    assert np.all(np.diff(res.errors) <= 1e-12)
    assert res.A.min() >= 0 and res.D.min() >= 0


def test_nmf_rejects_negative():
    with pytest.raises(ValueError):
        nmf(-np.ones((2, 2)), 1)


def test_ridge_examples():
    y = np.array([1.0, -2.0, 3.0])
    np.testing.assert_allclose(ridge(np.eye(3), y), y)
    np.testing.assert_allclose(ridge(np.eye(3), y, 1e12), 0, atol=1e-6)


@given(st.integers(0, 10_000))
def test_ridge_normal_equations(seed):
    rng = np.random.default_rng(seed)
    X, y = rng.normal(size=(5, 3)), rng.normal(size=5)
    lam = 0.3
    want = np.linalg.inv(X.T @ X + lam * np.eye(3)) @ X.T @ y
    np.testing.assert_allclose(ridge(X, y, lam), want, rtol=1e-10, atol=1e-12)


def test_dksvd_exact_linear_model():
    X = np.diag([1.0, 2.0, 0.5, 1.5])
    y = X @ np.array([0.3, -1.0, 2.0, 0.7])
    model = fit_stacked(X, y, k=4, mode="dksvd", max_iters=2000, tol=1e-14)
    pred = model.train_predictions()
    assert np.sqrt(np.mean((pred - y) ** 2)) <= 1e-6


@pytest.mark.parametrize("mode", ["lr_nmf", "dksvd"])
def test_constant_target_predicted_constant(mode):
    rng = np.random.default_rng(1)
    X = rng.uniform(size=(20, 4))
    model = fit_stacked(X, np.full(20, 4.2), k=2, mode=mode)
    np.testing.assert_allclose(model.train_predictions(), 4.2, atol=1e-6)
    np.testing.assert_allclose(model.predict(rng.uniform(size=(5, 4))), 4.2, atol=1e-6)


def test_lr_nmf_factors_nonnegative_and_self_consistent():
    rng = np.random.default_rng(2)
    X, y = rng.uniform(size=(30, 5)), rng.uniform(size=30)
    model = fit_stacked(X, y, k=3, mode="lr_nmf", seed=4)
    assert model.A.min() >= 0 and model.D.min() >= 0 and model.W.min() >= 0
    np.testing.assert_allclose(model.train_predictions(), model.y_offset + model.y_scale * model.A @ model.W)


def test_baselines_deterministic():
    rng = np.random.default_rng(3)
    X, y = rng.uniform(size=(25, 5)), rng.normal(size=25)
    for mode in ("lr_nmf", "dksvd"):
        a = fit_stacked(X, y, k=2, mode=mode, seed=5).predict(X)
        b = fit_stacked(X, y, k=2, mode=mode, seed=5).predict(X)
        np.testing.assert_array_equal(a, b)


def test_fit_ridge_has_intercept():
    rng = np.random.default_rng(4)
    X = rng.normal(size=(40, 3))
    y = 5.0 + X @ np.array([1.0, 2.0, -1.0])
    np.testing.assert_allclose(fit_ridge(X, y, 0.0).predict(X), y, atol=1e-9)


def test_unknown_mode():
    with pytest.raises(ValueError):
        fit_stacked(np.ones((3, 2)), np.ones(3), 1, mode="kmeans")
