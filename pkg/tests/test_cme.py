import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from drcme.cme import CmeFitError, cme_weights, fit_cme
from drcme.kernels import KernelSpec, gram

G1 = KernelSpec.gaussian(1.0)


def random_arm(seed, n=15, d=2):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, d))
    T = np.r_[np.ones(n - 3, dtype=int), 0, 0, 0]
    return X, T


def test_scalar_inversion_per_isolated_point():
    # two points 100 bandwidths apart make K the identity, so each block is 1 / (1 + 1)
    model = fit_cme(np.array([[0.0], [100.0]]), np.array([1, 1]), 1, G1, lam=1.0)
    np.testing.assert_allclose(model.weight_matrix, 0.5 * np.eye(2), atol=1e-15)
    np.testing.assert_allclose(cme_weights(model, [0.0]), [0.5, 0.0], atol=1e-15)


def test_single_arm_sample_rejected():
    with pytest.raises(CmeFitError):
        fit_cme(np.array([[0.3], [9.0], [8.0]]), np.array([1, 0, 0]), 1, G1, lam=1.0)


def test_large_lambda_shrinks_to_zero():
    X, T = random_arm(0)
    model = fit_cme(X, T, 1, G1, lam=1e9)
    x = np.array([0.1, -0.2])
    kx = gram(G1, X[T == 1], x[None, :])[:, 0]
    assert np.max(np.abs(cme_weights(model, x))) <= np.linalg.norm(kx) / 1e9


def test_infinite_lambda_is_zero_embedding():
    X, T = random_arm(1)
    model = fit_cme(X, T, 1, G1, lam=np.inf)
    assert model.is_zero
    np.testing.assert_array_equal(cme_weights(model, X[0]), 0.0)


@pytest.mark.parametrize("seed", range(10))
@pytest.mark.parametrize("lam", [None, 1e-3, 1.0])
def test_ridge_residual(seed, lam):
    X, T = random_arm(seed)
    model = fit_cme(X, T, 1, G1, lam=lam)
    K = gram(G1, X[T == 1])
    R = (K + model.lam * np.eye(K.shape[0])) @ model.weight_matrix - np.eye(K.shape[0])
    assert np.max(np.abs(R)) <= 1e-8
    np.testing.assert_array_equal(model.weight_matrix, model.weight_matrix.T)
    assert np.linalg.eigvalsh(model.weight_matrix).min() > 0
    x = np.random.default_rng(seed).standard_normal(2)
    v = cme_weights(model, x)
    kx = gram(G1, X[T == 1], x[None, :])[:, 0]
    assert np.max(np.abs((K + model.lam * np.eye(K.shape[0])) @ v - kx)) <= 1e-10


def test_interpolation_limit():
    X = np.arange(5.0)[:, None] * 10
    model = fit_cme(X, np.ones(5, dtype=int), 1, G1, lam=1e-10)
    np.testing.assert_allclose(cme_weights(model, X[2]), np.eye(5)[2], atol=1e-3)


def test_dimension_mismatch():
    X, T = random_arm(2)
    with pytest.raises(ValueError):
        cme_weights(fit_cme(X, T, 1, G1), [0.0, 1.0, 2.0])


def test_identical_kernel_vectors_give_identical_weights():
    X, T = random_arm(3)
    model = fit_cme(X, T, 1, G1)
    # reflection through a training-set symmetry: a point and itself
    far1, far2 = np.array([1e3, 0.0]), np.array([0.0, -1e3])
    np.testing.assert_array_equal(cme_weights(model, far1), cme_weights(model, far2))


def test_constant_kernel_gives_equal_weights():
    X = np.zeros((6, 1))
    model = fit_cme(X, np.ones(6, dtype=int), 1, G1, lam=0.5)
    v = cme_weights(model, [0.0])
    np.testing.assert_allclose(v, v[0], rtol=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000), st.floats(1e-4, 10), st.floats(1.0, 100.0))
def test_shrinkage_monotonicity(seed, lam1, factor):
    X, T = random_arm(seed)
    x = np.random.default_rng(seed + 1).standard_normal(2)
    v1 = cme_weights(fit_cme(X, T, 1, G1, lam=lam1), x)
    v2 = cme_weights(fit_cme(X, T, 1, G1, lam=lam1 * factor), x)
    assert np.linalg.norm(v2) <= np.linalg.norm(v1) * (1 + 1e-12)


def test_default_lambda_and_gram_slice():
    X, T = random_arm(4)
    full = gram(G1, X)
    a = fit_cme(X, T, 1, G1)
    b = fit_cme(X, T, 1, G1, gram_matrix=full)
    assert a.lam == pytest.approx(1.0 / np.sqrt(12))
    np.testing.assert_allclose(a.weight_matrix, b.weight_matrix, rtol=1e-12)


def test_nonpositive_lambda_rejected():
    X, T = random_arm(5)
    with pytest.raises(ValueError):
        fit_cme(X, T, 1, G1, lam=0.0)
