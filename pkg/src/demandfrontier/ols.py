"""Model 1: least-squares benchmark and corrected-OLS starting values."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .model import DesignMatrices, Family
from .sfa import LOG_2PI, ParameterVector

THETA_U_FLOOR = -40.0
SIGMA_U_CLAMP = 0.05  # floor for the moment estimate, as a fraction of sqrt(sigma2)

# third central moment of a half-normal with unit scale: sqrt(2/pi) (4/pi - 1)
_HN_M3 = math.sqrt(2.0 / math.pi) * (4.0 / math.pi - 1.0)
_HN_MEAN = math.sqrt(2.0 / math.pi)
_HN_VAR = 1.0 - 2.0 / math.pi


class InsufficientDataError(ValueError):
    pass


class WrongSkewWarning(UserWarning):
    """OLS residuals are not right-skewed, as a consumption frontier implies."""


@dataclass(frozen=True, eq=False)
class OlsFit:
    beta_hat: np.ndarray
    sigma2_hat: float
    loglik: float
    residuals: np.ndarray
    cov_beta: np.ndarray
    skewness: float
    n: int
    degenerate: bool = False

    @property
    def se(self) -> np.ndarray:
        return np.sqrt(np.diag(self.cov_beta))


def fit_ols(dm: DesignMatrices) -> OlsFit:
    """Least squares via QR; ML variance (divisor n) inside the log-likelihood.

    An exact fit (zero residual variance) is returned with ``degenerate=True``
    and an infinite log-likelihood rather than raising.
    """
    n, p = dm.X.shape
    if n <= p:
        raise InsufficientDataError(f"need n > p, got n={n}, p={p}")
    Q, R = scipy.linalg.qr(dm.X, mode="economic")
    beta = scipy.linalg.solve_triangular(R, Q.T @ dm.y)
    e = dm.y - dm.X @ beta
    ssr = float(e @ e)
    sigma2 = ssr / n
    Rinv = scipy.linalg.solve_triangular(R, np.eye(p))
    xtx_inv = Rinv @ Rinv.T
    cov = sigma2 * n / (n - p) * xtx_inv
    scale = max(float(np.std(dm.y)), 1.0)
    degenerate = sigma2 <= (1e-15 * scale) ** 2
    if degenerate:
        sigma2, ll, skew = 0.0, math.inf, 0.0
        e = np.zeros_like(e)
        cov = np.zeros_like(cov)
    else:
        ll = -0.5 * n * (LOG_2PI + math.log(sigma2) + 1.0)
        em = e - e.mean()
        skew = float(np.mean(em**3) / np.mean(em**2) ** 1.5)
    return OlsFit(beta, sigma2, ll, e, cov, skew, n, degenerate)


@dataclass(frozen=True)
class Start:
    pv: ParameterVector
    sigma_u: float
    sigma_v: float
    warnings: tuple[str, ...] = field(default=())

    @property
    def wrong_skew(self) -> bool:
        return any("skew" in w for w in self.warnings)


def cols_start(
    ofit: OlsFit,
    family: Family | str,
    q: int = 0,
    intercept: bool = True,
    z_intercept: bool = True,
) -> Start:
    """Method-of-moments (corrected OLS) start for the frontier estimators.

    sigma_u comes from the third central moment of the residuals, which is
    positive for ``v + u`` errors. Non-positive skew clamps sigma_u at
    ``0.05 * sqrt(sigma2)``; strictly negative skew also warns.
    """
    family = Family(family)
    s2 = max(ofit.sigma2_hat, 1e-300)
    e = ofit.residuals - ofit.residuals.mean()
    m3 = float(np.mean(e**3))
    if abs(m3) <= 1e-10 * s2**1.5:  # rounding noise on symmetric residuals
        m3 = 0.0
    floor = SIGMA_U_CLAMP * math.sqrt(s2)
    notes: list[str] = []
    if m3 > 0:
        sigma_u = max((m3 / _HN_M3) ** (1.0 / 3.0), floor)
    else:
        sigma_u = floor
        if m3 < 0:
            msg = "wrong skew: OLS residuals are left-skewed; sigma_u start clamped"
            notes.append(msg)
            warnings.warn(msg, WrongSkewWarning, stacklevel=2)
    s2v = max(s2 - _HN_VAR * sigma_u**2, 0.25 * s2)
    beta = ofit.beta_hat.copy()
    if intercept:
        beta[0] -= _HN_MEAN * sigma_u
    theta_v, theta_u = math.log(s2v), 2.0 * math.log(sigma_u)
    if family is Family.OLS:
        pv = ParameterVector(family, ofit.beta_hat, math.log(s2))
    elif family is Family.NHN:
        pv = ParameterVector(family, beta, theta_v, theta_u=theta_u)
    elif family is Family.NHN_HET:
        delta = np.zeros(q)
        if q and z_intercept:
            delta[0] = theta_u
        pv = ParameterVector(family, beta, theta_v, delta=delta)
    else:
        pv = ParameterVector(family, beta, theta_v, theta_u=theta_u, delta=np.zeros(q))
    return Start(pv, sigma_u, math.sqrt(s2v), tuple(notes))
