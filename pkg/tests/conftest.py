import math

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from demandfrontier.model import DesignMatrices, Family, ModelSpec
from demandfrontier.simulate import Covariate, DgpSpec

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def make_dm(y, X, Z=None, family=Family.NHN):
    """DesignMatrices straight from arrays (bypasses Dataset validation)."""
    y = np.asarray(y, dtype=float)
    X = np.asarray(X, dtype=float).reshape(len(y), -1)
    Z = np.zeros((len(y), 0)) if Z is None else np.asarray(Z, dtype=float).reshape(len(y), -1)
    lx = ("const",) + tuple(f"x{j}" for j in range(1, X.shape[1]))
    lz = ("const",) + tuple(f"z{j}" for j in range(1, Z.shape[1])) if Z.shape[1] else ()
    spec = ModelSpec(family, lx[1:], lz[1:] if family.uses_z else ())
    return DesignMatrices(y, X, Z, lx, lz, spec, tuple(str(i) for i in range(len(y))))


def random_dm(rng, n, p=2, q=2, family=Family.NHN):
    X = np.column_stack([np.ones(n), rng.normal(size=(n, p - 1))])
    Z = np.column_stack([np.ones(n), rng.normal(size=(n, q - 1))]) if family.uses_z else None
    y = rng.normal(1.0, 1.0, n)
    return make_dm(y, X, Z, family)


BETA = (8.0, 0.25, -0.10)
COVARIATES = {"own_ac": Covariate("bernoulli", (0.5,)), "wfpr": Covariate("uniform", (0.0, 1.0))}


def nhn_dgp(n=2000, seed=20240101, sigma_u=0.5, sigma_v=0.3):
    return DgpSpec(Family.NHN, BETA, sigma_v, n, seed, ("own_ac", "wfpr"),
                   sigma_u=sigma_u, covariates=COVARIATES)


def het_dgp(n=2000, seed=20240102):
    return DgpSpec(Family.NHN_HET, BETA, 0.3, n, seed, ("own_ac", "wfpr"),
                   delta=(-1.5, 0.4), ineff_vars=("hh_size",), covariates=COVARIATES)


def tn_dgp(n=2000, seed=20240103):
    return DgpSpec(Family.TN, BETA, 0.3, n, seed, ("own_ac", "wfpr"), sigma_u=0.4,
                   delta=(0.1, 0.05), ineff_vars=("hh_size",), covariates=COVARIATES)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


SQRT_2_OVER_PI = math.sqrt(2.0 / math.pi)


# acceptance criterion -> (passed, title, detail); filled by test_acceptance.py
ACCEPTANCE: dict[int, tuple[bool, str, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, title, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {title}  [{detail}]")
