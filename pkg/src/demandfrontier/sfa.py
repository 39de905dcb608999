"""Composed-error log-likelihoods for consumption frontiers.

Orientation: ``eps = y - X @ beta = v + u`` with ``u >= 0``, i.e. observed
consumption sits *above* the minimum-consumption frontier.

Variances are carried as logs (``theta = ln sigma^2``), so every finite
parameter vector is admissible. Packing order is always
``[beta | theta_v | ineff-block]`` where the inefficiency block is

* NHN      -> ``[theta_u]``
* NHN_HET  -> ``delta`` with ``ln sigma_u_i^2 = Z_i @ delta``
* TN       -> ``[delta..., theta_u]`` with ``mu_i = Z_i @ delta``
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import erfcx, log_ndtr

from .model import DesignMatrices, Family

LOG_2PI = np.log(2.0 * np.pi)
LOG_2 = np.log(2.0)
SQRT1_2 = np.sqrt(0.5)
SQRT_2_OVER_PI = np.sqrt(2.0 / np.pi)

# Coefficients (-1)^k (2k-1)!! of the asymptotic series for the Mills ratio.
_TAIL_TERMS = 24
_TAIL_COEF = np.cumprod(np.r_[1.0, -np.arange(1.0, 2.0 * _TAIL_TERMS, 2.0)])
_TAIL_CUTOFF = -8.0


class DimensionError(ValueError):
    pass


def log_norm_pdf(x):
    x = np.asarray(x, dtype=float)
    return -0.5 * x * x - 0.5 * LOG_2PI


def norm_pdf(x):
    return np.exp(log_norm_pdf(x))


def log_norm_cdf(x):
    """ln Phi(x), finite for every finite x."""
    x = np.asarray(x, dtype=float)
    out = log_ndtr(x)
    return out if out.ndim else out[()]


def mills(x):
    """Inverse Mills ratio phi(x)/Phi(x), stable for very negative x."""
    x = np.asarray(x, dtype=float)
    with np.errstate(over="ignore"):
        return SQRT_2_OVER_PI / erfcx(-x * SQRT1_2)


def _scaled_log_cdf(x):
    """h(x) = ln Phi(x) + x^2/2 for x <= 0 (larger x are clipped to 0)."""
    x = np.minimum(np.asarray(x, dtype=float), 0.0)
    return np.log(0.5 * erfcx(-x * SQRT1_2))


def _scaled_mills(x):
    """h'(x) = phi(x)/Phi(x) + x for x <= 0, without cancellation in the tail."""
    x = np.minimum(np.asarray(x, dtype=float), 0.0)
    out = mills(x) + x
    lo = x < _TAIL_CUTOFF
    if np.any(lo):
        xl = x[lo]
        t = 1.0 / (xl * xl)
        s, ds = np.zeros_like(xl), np.zeros_like(xl)
        for j in range(len(_TAIL_COEF) - 1, -1, -1):
            if j:
                ds = ds * t + j * _TAIL_COEF[j]
            s = s * t + _TAIL_COEF[j]
        # h = -ln(-x) + const + ln S(t) with t = x^-2, dt/dx = -2 x^-3
        out[lo] = -1.0 / xl - 2.0 * ds / (s * xl**3)
    return out


@dataclass(frozen=True)
class ParameterVector:
    family: Family
    beta: np.ndarray
    theta_v: float
    theta_u: float | None = None
    delta: np.ndarray | None = None

    def __post_init__(self):
        fam = Family(self.family)
        object.__setattr__(self, "family", fam)
        object.__setattr__(self, "beta", np.asarray(self.beta, dtype=float).copy())
        if self.delta is not None:
            object.__setattr__(self, "delta", np.asarray(self.delta, dtype=float).copy())
        if fam in (Family.NHN, Family.TN) and self.theta_u is None:
            raise ValueError(f"{fam.value} needs theta_u")
        if fam.uses_z and self.delta is None:
            raise ValueError(f"{fam.value} needs delta")

    def pack(self) -> np.ndarray:
        parts = [self.beta, [self.theta_v]]
        if self.family is Family.NHN:
            parts.append([self.theta_u])
        elif self.family is Family.NHN_HET:
            parts.append(self.delta)
        elif self.family is Family.TN:
            parts += [self.delta, [self.theta_u]]
        return np.concatenate([np.asarray(p, dtype=float) for p in parts])

    @classmethod
    def unpack(cls, family: Family | str, theta: np.ndarray, p: int, q: int = 0) -> "ParameterVector":
        family = Family(family)
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (n_params(family, p, q),):
            raise DimensionError(
                f"{family.value}: expected {n_params(family, p, q)} parameters, got {theta.shape}"
            )
        beta, theta_v, rest = theta[:p], float(theta[p]), theta[p + 1:]
        if family is Family.OLS:
            return cls(family, beta, theta_v)
        if family is Family.NHN:
            return cls(family, beta, theta_v, theta_u=float(rest[0]))
        if family is Family.NHN_HET:
            return cls(family, beta, theta_v, delta=rest)
        return cls(family, beta, theta_v, theta_u=float(rest[q]), delta=rest[:q])

    @property
    def sigma_v(self) -> float:
        return float(np.exp(0.5 * self.theta_v))

    @property
    def sigma_u(self) -> float | None:
        return None if self.theta_u is None else float(np.exp(0.5 * self.theta_u))


def n_params(family: Family, p: int, q: int = 0) -> int:
    family = Family(family)
    return p + 1 + {Family.OLS: 0, Family.NHN: 1, Family.NHN_HET: q, Family.TN: q + 1}[family]


def param_labels(dm: DesignMatrices, family: Family | None = None) -> list[str]:
    family = Family(family or dm.spec.family)
    labels = [f"beta:{c}" for c in dm.labels_X] + ["theta_v"]
    if family is Family.NHN:
        labels.append("theta_u")
    elif family is Family.NHN_HET:
        labels += [f"delta:{c}" for c in dm.labels_Z]
    elif family is Family.TN:
        labels += [f"delta:{c}" for c in dm.labels_Z] + ["theta_u"]
    return labels


def _check(dm: DesignMatrices, pv: ParameterVector, family: Family) -> None:
    if pv.family is not family:
        raise DimensionError(f"parameter vector is {pv.family.value}, expected {family.value}")
    if pv.beta.shape != (dm.p,) or dm.X.shape[0] != dm.y.shape[0]:
        raise DimensionError(f"beta has shape {pv.beta.shape}, X has {dm.X.shape}")
    if family.uses_z and (pv.delta.shape != (dm.q,) or dm.Z.shape[0] != dm.n):
        raise DimensionError(f"delta has shape {pv.delta.shape}, Z has {dm.Z.shape}")


def residuals(dm: DesignMatrices, beta: np.ndarray) -> np.ndarray:
    return dm.y - dm.X @ beta


def loglik_obs_nhn(eps, sigma_v, sigma_u):
    """Per-observation normal/half-normal log-density of eps = v + u."""
    sigma = np.hypot(sigma_u, sigma_v)
    lam = sigma_u / sigma_v
    return LOG_2 - np.log(sigma) + log_norm_pdf(eps / sigma) + log_norm_cdf(lam * eps / sigma)


def loglik_obs_tn(eps, mu, sigma_v, sigma_u):
    """Per-observation normal/truncated-normal log-density of eps = v + u."""
    s2 = sigma_u**2 + sigma_v**2
    sigma = np.sqrt(s2)
    mu_star = (sigma_v**2 * mu + sigma_u**2 * eps) / s2
    sigma_star = sigma_u * sigma_v / sigma
    a, b = mu / sigma_u, mu_star / sigma_star
    with np.errstate(over="ignore", invalid="ignore"):
        direct = -np.log(sigma) - log_norm_cdf(a) + log_norm_pdf((eps - mu) / sigma) + log_norm_cdf(b)
        # both Phi arguments negative: the x^2/2 parts cancel in closed form,
        # which keeps the sigma_u -> 0 limit exact
        tail = -np.log(sigma) + log_norm_pdf(eps / sigma_v) + _scaled_log_cdf(b) - _scaled_log_cdf(a)
    return np.where((a < 0) & (b < 0), tail, direct)


def loglik_nhn(dm: DesignMatrices, pv: ParameterVector) -> float:
    _check(dm, pv, Family.NHN)
    eps = residuals(dm, pv.beta)
    return float(np.sum(loglik_obs_nhn(eps, pv.sigma_v, pv.sigma_u)))


def het_sigma_u(dm: DesignMatrices, delta: np.ndarray) -> np.ndarray:
    return np.exp(0.5 * (dm.Z @ delta))


def loglik_nhn_het(dm: DesignMatrices, pv: ParameterVector) -> float:
    _check(dm, pv, Family.NHN_HET)
    eps = residuals(dm, pv.beta)
    return float(np.sum(loglik_obs_nhn(eps, pv.sigma_v, het_sigma_u(dm, pv.delta))))


def loglik_tn(dm: DesignMatrices, pv: ParameterVector) -> float:
    _check(dm, pv, Family.TN)
    eps = residuals(dm, pv.beta)
    mu = dm.Z @ pv.delta
    return float(np.sum(loglik_obs_tn(eps, mu, pv.sigma_v, pv.sigma_u)))


def loglik_ols(dm: DesignMatrices, pv: ParameterVector) -> float:
    """Gaussian log-likelihood with variance exp(theta_v)."""
    eps = residuals(dm, pv.beta)
    s2 = np.exp(pv.theta_v)
    return float(-0.5 * dm.n * (LOG_2PI + pv.theta_v) - 0.5 * np.sum(eps * eps) / s2)


_LOGLIK = {
    Family.OLS: loglik_ols,
    Family.NHN: loglik_nhn,
    Family.NHN_HET: loglik_nhn_het,
    Family.TN: loglik_tn,
}


def loglik(family: Family | str, dm: DesignMatrices, pv: ParameterVector) -> float:
    return _LOGLIK[Family(family)](dm, pv)


def _obs_partials(eps, mu, s_v, s_u):
    """Partials of the general per-observation log-density.

    Returns d/d eps, d/d mu, d/d ln s_u, d/d ln s_v, where s = sigma^2.
    Half-normal is the mu = 0 case (the ln Phi(0) term is a constant).
    """
    s2 = s_u + s_v
    sigma = np.sqrt(s2)
    sig_u, sig_v = np.sqrt(s_u), np.sqrt(s_v)
    denom = sigma * sig_u * sig_v  # sigma * sigma_u * sigma_v
    a = mu / sig_u
    r = (eps - mu) / sigma
    b = (s_v * mu + s_u * eps) / denom
    ma, mb = mills(a), mills(b)

    d_eps = -r / sigma + mb * sig_u / (sigma * sig_v)
    d_mu = -ma / sig_u + r / sigma + mb * sig_v / (sigma * sig_u)
    db_u = s_u * eps / denom - b * (0.5 * s_u / s2 + 0.5)
    db_v = s_v * mu / denom - b * (0.5 * s_v / s2 + 0.5)
    d_tu = 0.5 * s_u / s2 * (r * r - 1.0) + 0.5 * ma * a + mb * db_u
    d_tv = 0.5 * s_v / s2 * (r * r - 1.0) + mb * db_v
    tail = (a < 0) & (b < 0)
    if np.any(tail):
        # same split as loglik_obs_tn: mills(x) = -x + h'(x)
        ka, kb = _scaled_mills(a), _scaled_mills(b)
        d_eps = np.where(tail, -eps / s_v + kb * sig_u / (sigma * sig_v), d_eps)
        d_mu = np.where(tail, kb * sig_v / (sigma * sig_u) - ka / sig_u, d_mu)
        d_tu = np.where(tail, -0.5 * s_u / s2 + 0.5 * ka * a + kb * db_u, d_tu)
        d_tv = np.where(tail, -0.5 * s_v / s2 + 0.5 * eps * eps / s_v + kb * db_v, d_tv)
    return d_eps, d_mu, d_tu, d_tv


def grad_loglik(family: Family | str, dm: DesignMatrices, pv: ParameterVector) -> np.ndarray:
    """Analytic gradient, packed like :meth:`ParameterVector.pack`."""
    family = Family(family)
    eps = residuals(dm, pv.beta)
    s_v = np.exp(pv.theta_v)
    if family is Family.OLS:
        g_beta = dm.X.T @ eps / s_v
        g_tv = -0.5 * dm.n + 0.5 * np.sum(eps * eps) / s_v
        return np.r_[g_beta, g_tv]
    _check(dm, pv, family)
    if family is Family.NHN:
        d_eps, _, d_tu, d_tv = _obs_partials(eps, 0.0, s_v, np.exp(pv.theta_u))
        tail = [np.sum(d_tu)]
    elif family is Family.NHN_HET:
        d_eps, _, d_tu, d_tv = _obs_partials(eps, 0.0, s_v, np.exp(dm.Z @ pv.delta))
        tail = dm.Z.T @ d_tu
    else:
        d_eps, d_mu, d_tu, d_tv = _obs_partials(eps, dm.Z @ pv.delta, s_v, np.exp(pv.theta_u))
        tail = np.r_[dm.Z.T @ d_mu, np.sum(d_tu)]
    return np.r_[-(dm.X.T @ d_eps), np.sum(d_tv), tail]
