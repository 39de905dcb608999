import math

import numpy as np
import pytest

from conftest import het_dgp, nhn_dgp, tn_dgp
from demandfrontier import mle
from demandfrontier.diagnostics import lr_test
from demandfrontier.mle import CertificationError, ConvergenceError, certify, fit
from demandfrontier.model import Family, build
from demandfrontier.sfa import ParameterVector, grad_loglik
from demandfrontier.simulate import generate


def _fit(dgp, family=None):
    sim = generate(dgp)
    spec = dgp.model_spec(family)
    dm = build(spec, sim.dataset)
    return sim, dm, fit(spec, dm)


@pytest.fixture(scope="module")
def nhn_case():
    return _fit(nhn_dgp(n=5000, seed=31))


def test_nhn_recovers_truth_within_three_se(nhn_case):
    sim, dm, fr = nhn_case
    truth = sim.dgp.truth_theta()
    assert np.all(np.abs(fr.theta - truth) <= 3 * fr.se), (fr.theta, truth, fr.se)
    assert fr.convergence.converged and not fr.convergence.boundary


def test_fit_certifies(nhn_case):
    _, dm, fr = nhn_case
    cert = certify(fr, dm)
    assert cert.ok and cert.grad_norm <= mle.GRAD_TOL * (1 + abs(fr.loglik))


def test_tampered_estimate_fails_gradient_check(nhn_case):
    _, dm, fr = nhn_case
    beta = fr.pv_hat.beta.copy()
    beta[0] += 0.1
    pv = ParameterVector(Family.NHN, beta, fr.pv_hat.theta_v, theta_u=fr.pv_hat.theta_u)
    from demandfrontier.sfa import loglik
    bad = mle.FitResult(fr.spec, pv, loglik(Family.NHN, dm, pv), fr.cov, fr.labels, fr.sigma_v,
                        fr.sigma_u, fr.lam, fr.sigma2, fr.convergence)
    with pytest.raises(CertificationError) as e:
        certify(bad, dm)
    assert e.value.invariant == "gradient norm"


def test_stored_loglik_mismatch_fails(nhn_case):
    _, dm, fr = nhn_case
    bad = mle.FitResult(fr.spec, fr.pv_hat, fr.loglik + 1.0, fr.cov, fr.labels, fr.sigma_v,
                        fr.sigma_u, fr.lam, fr.sigma2, fr.convergence)
    with pytest.raises(CertificationError):
        certify(bad, dm)


def test_covariance_symmetric_psd(nhn_case):
    _, _, fr = nhn_case
    assert np.allclose(fr.cov, fr.cov.T)
    assert np.linalg.eigvalsh(fr.cov).min() > 0
    assert np.allclose(fr.se, np.sqrt(np.diag(fr.cov)))
    assert fr.sigma2 == pytest.approx(fr.sigma_u**2 + fr.sigma_v**2, rel=1e-14)
    assert fr.lam == pytest.approx(fr.sigma_u / fr.sigma_v, rel=1e-14)


def test_ols_family_delegates(nhn_case):
    sim, _, _ = nhn_case
    spec = sim.dgp.model_spec(Family.OLS)
    dm = build(spec, sim.dataset)
    fr = fit(spec, dm)
    assert fr.labels == ("beta:const", "beta:own_ac", "beta:wfpr", "theta_v")
    assert fr.sigma_u == 0.0 and fr.lam == 0.0
    assert np.linalg.norm(grad_loglik(Family.OLS, dm, fr.pv_hat)) < 1e-6
    certify(fr, dm)


@pytest.mark.parametrize("make", [het_dgp, tn_dgp])
def test_het_and_tn_fit_and_certify(make):
    sim, dm, fr = _fit(make(n=3000))
    certify(fr, dm)
    truth = sim.dgp.truth_theta()
    z = (fr.theta - truth) / fr.se
    assert np.all(np.abs(z) <= 4), z


def test_nesting_chain():
    dgp = tn_dgp(n=1500, seed=77)
    sim = generate(dgp)
    ll = {}
    for fam in Family:
        spec = dgp.model_spec(fam)
        ll[fam] = fit(spec, build(spec, sim.dataset)).loglik
    assert ll[Family.OLS] <= ll[Family.NHN] + 1e-6
    assert ll[Family.NHN] <= ll[Family.NHN_HET] + 1e-6
    assert ll[Family.NHN] <= ll[Family.TN] + 1e-6


def test_no_inefficiency_collapses_to_boundary():
    # sigma_u = 0: whenever OLS residuals are left-skewed the NHN maximum sits at lambda = 0
    seen_wrong_skew = 0
    for seed in range(6):
        dgp = nhn_dgp(n=400, seed=500 + seed, sigma_u=0.0)
        sim = generate(dgp)
        spec = dgp.model_spec()
        dm = build(spec, sim.dataset)
        fr = fit(spec, dm)
        ols = fit(dgp.model_spec(Family.OLS), dm)
        lr = lr_test(ols.loglik, fr.loglik)
        assert not lr.reject
        if fr.convergence.wrong_skew_warning:
            seen_wrong_skew += 1
            assert fr.convergence.boundary and lr.lr == pytest.approx(0.0, abs=1e-6)
        if fr.convergence.boundary:
            assert mle.NO_INEFFICIENCY in fr.warnings
            assert fr.lam < 1e-8
            assert np.isnan(fr.se[-1]) and np.all(np.isfinite(fr.se[:-1]))
            certify(fr, dm)
    assert seen_wrong_skew > 0


def test_unconverged_fit_raises_with_best_point(monkeypatch):
    dgp = nhn_dgp(n=300, seed=9)
    sim = generate(dgp)
    spec = dgp.model_spec()
    dm = build(spec, sim.dataset)
    monkeypatch.setattr(mle, "GRAD_TOL", -1.0)
    with pytest.raises(ConvergenceError) as e:
        fit(spec, dm, max_restarts=1)
    assert e.value.best is not None and np.isfinite(e.value.best.loglik)


def test_too_few_observations():
    dgp = nhn_dgp(n=4, seed=1)
    sim = generate(dgp)
    spec = dgp.model_spec()
    with pytest.raises(ValueError):
        fit(spec, build(spec, sim.dataset))


def test_permutation_invariance():
    dgp = nhn_dgp(n=1000, seed=44)
    sim = generate(dgp)
    spec = dgp.model_spec()
    a = fit(spec, build(spec, sim.dataset))
    perm = np.random.default_rng(0).permutation(sim.dataset.n)
    b = fit(spec, build(spec, sim.dataset.take(perm)))
    assert np.allclose(a.theta, b.theta, rtol=0, atol=1e-10)


def test_fit_is_deterministic():
    dgp = het_dgp(n=800, seed=45)
    sim = generate(dgp)
    spec = dgp.model_spec()
    dm = build(spec, sim.dataset)
    a, b = fit(spec, dm), fit(spec, dm)
    assert np.array_equal(a.theta, b.theta) and a.loglik == b.loglik


def test_nhn_footer_identities():
    # sigma_v = 0.347, sigma_u = 0.213 -> lambda 0.6138, sigma^2 0.1658
    pv = ParameterVector(Family.NHN, [8.187], 2 * math.log(0.347), theta_u=2 * math.log(0.213))
    sv, su, lam, s2 = mle.derived_quantities(Family.NHN, pv, None)
    assert round(lam, 3) in (0.613, 0.614) and lam == pytest.approx(0.6138, abs=5e-5)
    assert s2 == pytest.approx(0.1658, abs=5e-5)


@pytest.fixture(scope="module")
def collapsed_tn():
    # TN on this survey fixture runs to the sigma_u floor, where u = max(Z delta, 0)
    from demandfrontier.model import ModelSpec
    from demandfrontier.simulate import fixture_table2
    ds = fixture_table2("SRH", 412, 91)
    spec = ModelSpec(Family.TN, ("income_quartile", "hh_size", "wfpr", "own_ac"), ("avg_hh_age",))
    dm = build(spec, ds)
    return dm, fit(spec, dm)


def test_collapsed_tn_is_a_boundary_fit(collapsed_tn):
    dm, fr = collapsed_tn
    assert fr.convergence.boundary and fr.convergence.converged
    assert mle.NO_INEFFICIENCY in fr.warnings
    assert certify(fr, dm).ok
    q = slice(dm.p + 1, dm.p + 1 + dm.q)
    assert np.all(np.isnan(np.diag(fr.cov)[q])) and np.all(np.isfinite(np.diag(fr.cov)[:dm.p + 1]))


def test_collapsed_tn_is_a_local_maximum(collapsed_tn):
    from demandfrontier.sfa import loglik
    dm, fr = collapsed_tn
    theta = fr.theta
    for j in range(theta.size - 1):
        for h in (1e-6, 1e-4, 1e-2):
            for sgn in (1.0, -1.0):
                th = theta.copy()
                th[j] += sgn * h
                pv = ParameterVector.unpack(Family.TN, th, dm.p, dm.q)
                assert loglik(Family.TN, dm, pv) <= fr.loglik + 1e-12 * abs(fr.loglik), (j, sgn * h)


def test_collapsed_tn_gradient_test_alone_would_fail(collapsed_tn):
    # the location slope jumps across the kink, so only the one-sided test certifies it
    dm, fr = collapsed_tn
    g = grad_loglik(Family.TN, dm, fr.pv_hat)[:-1]
    assert np.linalg.norm(g) > mle.GRAD_TOL * (1 + abs(fr.loglik))
