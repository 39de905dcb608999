import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import make_dm
from demandfrontier.model import Family
from demandfrontier.ols import (
    SIGMA_U_CLAMP,
    InsufficientDataError,
    WrongSkewWarning,
    OlsFit,
    cols_start,
    fit_ols,
)


def _design(rng, n, k=1):
    return np.column_stack([np.ones(n), rng.normal(size=(n, k))])


def test_exact_fit_is_degenerate(rng):
    X = _design(rng, 20)
    fit = fit_ols(make_dm(X @ [1.0, 2.0], X, family=Family.OLS))
    assert np.allclose(fit.beta_hat, [1.0, 2.0], rtol=1e-10)
    assert fit.degenerate and fit.sigma2_hat == 0.0


def test_insufficient_data():
    with pytest.raises(InsufficientDataError):
        fit_ols(make_dm([1.0, 2.0], np.ones((2, 2)) + np.eye(2), family=Family.OLS))


def test_loglik_formula_and_cov(rng):
    n = 300
    X = _design(rng, n, 2)
    y = X @ [1.0, 0.5, -0.2] + rng.normal(0, 0.4, n)
    f = fit_ols(make_dm(y, X, family=Family.OLS))
    s2 = np.mean((y - X @ f.beta_hat) ** 2)
    assert f.sigma2_hat == pytest.approx(s2, rel=1e-12)
    assert f.loglik == pytest.approx(-n / 2 * (math.log(2 * math.pi) + math.log(s2) + 1), rel=1e-12)
    ref = s2 * n / (n - 3) * np.linalg.inv(X.T @ X)
    assert np.allclose(f.cov_beta, ref, rtol=1e-10)
    # normal equations
    assert np.allclose(X.T @ (y - X @ f.beta_hat), 0.0, atol=1e-9)


def test_residuals_sum_to_zero(rng):
    n = 500
    X = _design(rng, n)
    y = 5 + X[:, 1] + rng.exponential(1.0, n)
    f = fit_ols(make_dm(y, X, family=Family.OLS))
    assert abs(f.residuals.sum()) <= 1e-8 * n * np.std(y)


def test_recovers_truth_within_three_se(rng):
    n = 5000
    X = _design(rng, n)
    y = X @ [8.0, 0.25] + rng.normal(0, 0.3, n)
    f = fit_ols(make_dm(y, X, family=Family.OLS))
    assert np.all(np.abs(f.beta_hat - [8.0, 0.25]) <= 3 * f.se)


@given(st.floats(-1e3, 1e3))
def test_constant_shift_moves_intercept_only(c):
    r = np.random.default_rng(4)
    X = _design(r, 50, 2)
    y = X @ [1.0, 2.0, 3.0] + r.normal(size=50)
    a = fit_ols(make_dm(y, X, family=Family.OLS))
    b = fit_ols(make_dm(y + c, X, family=Family.OLS))
    assert b.beta_hat[0] - a.beta_hat[0] == pytest.approx(c, abs=1e-8 * max(1, abs(c)))
    assert np.allclose(a.beta_hat[1:], b.beta_hat[1:], atol=1e-9)


@given(st.lists(st.floats(-10, 10), min_size=4, max_size=4))
def test_noiseless_recovery(b):
    r = np.random.default_rng(5)
    X = _design(r, 40, 3)
    f = fit_ols(make_dm(X @ b, X, family=Family.OLS))
    assert np.allclose(f.beta_hat, b, rtol=1e-10, atol=1e-10)


def test_symmetric_residuals_start_at_floor(rng):
    e = rng.normal(0, 0.5, 2048)
    e = np.r_[e, -e]
    s2 = float(np.mean(e**2))
    f = OlsFit(np.array([1.0, 0.5]), s2, 0.0, e, np.eye(2), 0.0, e.size)
    start = cols_start(f, Family.NHN)
    assert start.sigma_u == pytest.approx(SIGMA_U_CLAMP * math.sqrt(s2), rel=1e-12)
    assert start.pv.beta[1] == 0.5


def test_moment_recovery_of_sigma_u(rng):
    n = 10000
    X = _design(rng, n)
    y = X @ [8.0, 0.25] + rng.normal(0, 0.3, n) + np.abs(rng.normal(0, 0.5, n))
    start = cols_start(fit_ols(make_dm(y, X)), Family.NHN)
    assert 0.4 <= start.sigma_u <= 0.6
    # intercept shifted down by E[u]
    assert start.pv.beta[0] == pytest.approx(fit_ols(make_dm(y, X)).beta_hat[0] - math.sqrt(2 / math.pi) * start.sigma_u)


def test_wrong_skew_warns(rng):
    n = 3000
    X = _design(rng, n)
    y = X @ [8.0, 0.25] + rng.normal(0, 0.3, n) - np.abs(rng.normal(0, 0.5, n))
    with pytest.warns(WrongSkewWarning):
        start = cols_start(fit_ols(make_dm(y, X)), Family.NHN)
    assert start.wrong_skew
    assert start.sigma_u == pytest.approx(SIGMA_U_CLAMP * math.sqrt(fit_ols(make_dm(y, X)).sigma2_hat))


def test_sigma_v_floor(rng):
    n = 2000
    X = _design(rng, n)
    # heavy skew with tiny noise pushes sigma2 - (1 - 2/pi) sigma_u^2 toward zero
    y = X @ [1.0, 0.1] + rng.exponential(1.0, n) ** 3
    f = fit_ols(make_dm(y, X))
    start = cols_start(f, Family.NHN)
    assert start.sigma_v**2 >= 0.25 * f.sigma2_hat * (1 - 1e-12)


@pytest.mark.parametrize("family,q", [(Family.NHN_HET, 3), (Family.TN, 2)])
def test_start_shapes(rng, family, q):
    n = 500
    X = _design(rng, n)
    y = X @ [1.0, 0.1] + rng.normal(0, 0.3, n) + np.abs(rng.normal(0, 0.5, n))
    start = cols_start(fit_ols(make_dm(y, X)), family, q=q)
    assert start.pv.delta.shape == (q,)
    if family is Family.TN:
        assert np.all(start.pv.delta == 0)
    else:
        assert start.pv.delta[0] == pytest.approx(2 * math.log(start.sigma_u))
        assert np.all(start.pv.delta[1:] == 0)
