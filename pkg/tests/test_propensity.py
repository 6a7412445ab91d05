import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import minimize

from drcme.propensity import PropensityModel, fit_logistic, inverse_odds, predict_e


def loglik(model, X, T):
    eta = model.logit(X)
    return float(np.sum(T * eta - np.logaddexp(0, eta)))


def brute_force_logistic(X, T):
    Z = np.hstack([X, np.ones((len(X), 1))])

    def nll(b):
        eta = Z @ b
        return -np.sum(T * eta - np.logaddexp(0, eta))

    def grad(b):
        return -Z.T @ (T - 1 / (1 + np.exp(-(Z @ b))))

    res = minimize(nll, np.zeros(Z.shape[1]), jac=grad, method="BFGS", options={"gtol": 1e-12, "maxiter": 10_000})
    return -res.fun


@pytest.mark.parametrize("seed", range(5))
def test_fit_matches_brute_force_optimizer(seed):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((200, 3)) * [1.0, 3.0, 0.5]
    T = (rng.random(200) < 1 / (1 + np.exp(-(X @ [0.8, -0.3, 1.0] + 0.2)))).astype(float)
    model = fit_logistic(X, T)
    assert model.converged
    assert loglik(model, X, T) >= brute_force_logistic(X, T) - 1e-6


def test_independent_treatment_gives_flat_propensity():
    rng = np.random.default_rng(0)
    X = rng.standard_normal((20_000, 2))
    T = np.tile([0, 1], 10_000)
    model = fit_logistic(X, T)
    assert np.max(np.abs(model.coefficients[:-1])) < 0.05
    assert np.max(np.abs(model.e1(X) - 0.5)) < 0.05
    assert loglik(model, X, T) >= brute_force_logistic(X, T) - 1e-6


def test_intercept_only_is_bernoulli_mle():
    T = np.r_[np.ones(30), np.zeros(70)]
    model = fit_logistic(np.zeros((100, 0)), T)
    assert model.e1(np.zeros((1, 0)))[0] == pytest.approx(0.3, abs=1e-10)


def test_separable_data_clipped():
    X = np.r_[-np.ones(10), np.ones(10)][:, None]
    T = np.r_[np.zeros(10), np.ones(10)]
    model = fit_logistic(X, T, clip_delta=0.03)
    assert np.all(np.isfinite(model.coefficients))
    e = model.e1(X)
    assert np.all((e >= 0.03) & (e <= 0.97))
    assert e[0] == 0.03 and e[-1] == 0.97


def test_single_arm_rejected():
    with pytest.raises(ValueError):
        fit_logistic(np.zeros((5, 1)), np.ones(5))


def test_predict_examples():
    zero = PropensityModel(np.zeros(3))
    assert predict_e(zero, [1.0, 2.0], 1) == 0.5
    assert predict_e(zero, [1.0, 2.0], 0) == 0.5
    assert inverse_odds(zero, [1.0, 2.0], 1) == 1.0
    m = PropensityModel(np.array([0.0, 0.0, np.log(3)]))
    assert predict_e(m, [4.0, -1.0], 1) == pytest.approx(0.75, abs=1e-15)
    assert inverse_odds(m, [4.0, -1.0], 1) == pytest.approx(1 / 3, abs=1e-15)
    huge = PropensityModel(np.array([0.0, 50.0]), clip_delta=0.01)
    assert predict_e(huge, [0.0], 1) == 0.99


def test_dimension_mismatch():
    with pytest.raises(ValueError):
        predict_e(PropensityModel(np.zeros(3)), [1.0], 1)


def test_clip_bounds_validated():
    with pytest.raises(ValueError):
        PropensityModel(np.zeros(2), clip_delta=0.5)


coef = st.lists(st.floats(-20, 20), min_size=3, max_size=3)
point = st.lists(st.floats(-10, 10), min_size=2, max_size=2)


@settings(max_examples=200, deadline=None)
@given(coef, point, st.floats(0.001, 0.49))
def test_complement_and_odds_identities(c, x, delta):
    m = PropensityModel(np.array(c), clip_delta=delta)
    assert predict_e(m, x, 0) + predict_e(m, x, 1) == 1.0
    assert inverse_odds(m, x, 0) * inverse_odds(m, x, 1) == pytest.approx(1.0, abs=1e-12)
    e = predict_e(m, x, 1)
    assert delta <= e <= 1 - delta


@settings(max_examples=100, deadline=None)
@given(coef, point, st.floats(0.0, 5.0))
def test_monotone_in_positive_coordinate(c, x, step):
    m = PropensityModel(np.array(c))
    j = int(np.argmax(c[:2]))
    if c[j] <= 0:
        return
    y = list(x)
    y[j] += step
    assert m.logit(np.array([y]))[0] >= m.logit(np.array([x]))[0]
