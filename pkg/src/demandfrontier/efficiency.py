"""Per-household inefficiency, efficiency scores and their distribution.

Given a fitted frontier, the inefficiency posterior is
``u | eps ~ N(mu_star, sigma_star^2)`` truncated at zero, with
``mu_star = (sigma_v^2 mu + sigma_u^2 eps) / sigma^2`` and
``sigma_star = sigma_u sigma_v / sigma`` (``mu = 0`` for half-normal models).
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .data import Dataset
from .mle import FitResult
from .model import DesignMatrices, Family
from .sfa import het_sigma_u, log_norm_cdf, mills

OVERUSE_THRESHOLDS = (0.2, 0.5)
DEFAULT_BINS = 20


class UnsupportedFamilyError(ValueError):
    pass


class Estimator(str, enum.Enum):
    BC = "BC"
    EXP_JLMS = "EXP_JLMS"

    @classmethod
    def parse(cls, s: "str | Estimator") -> "Estimator":
        if isinstance(s, Estimator):
            return s
        key = s.upper().replace("-", "_")
        return cls.EXP_JLMS if key in ("EXPJLMS", "EXP_JLMS", "JLMS") else cls(key)


def posterior(fr: FitResult, dm: DesignMatrices) -> tuple[np.ndarray, np.ndarray]:
    """(mu_star, sigma_star) of the truncated-normal posterior of u_i."""
    fam = fr.family
    if fam is Family.OLS:
        raise UnsupportedFamilyError("OLS has no inefficiency term to score")
    pv = fr.pv_hat
    eps = dm.y - dm.X @ pv.beta
    s_v = pv.sigma_v**2
    if fam is Family.NHN_HET:
        s_u = het_sigma_u(dm, pv.delta) ** 2
    else:
        s_u = np.full(dm.n, pv.sigma_u**2)
    mu = dm.Z @ pv.delta if fam is Family.TN else 0.0
    s2 = s_u + s_v
    mu_star = (s_v * mu + s_u * eps) / s2
    sigma_star = np.sqrt(s_u * s_v / s2)
    return mu_star, sigma_star


def conditional_mean_u(mu_star, sigma_star):
    """E[u | eps] for u | eps ~ N+(mu_star, sigma_star^2)."""
    z = mu_star / sigma_star
    return np.maximum(sigma_star * (z + mills(z)), 0.0)


def conditional_efficiency(mu_star, sigma_star):
    """E[exp(-u) | eps], evaluated in log space and capped at 1."""
    z = mu_star / sigma_star
    log_te = -mu_star + 0.5 * sigma_star**2 + log_norm_cdf(z - sigma_star) - log_norm_cdf(z)
    return np.minimum(np.exp(log_te), 1.0)


def jlms(fr: FitResult, dm: DesignMatrices) -> np.ndarray:
    return conditional_mean_u(*posterior(fr, dm))


def efficiency_scores(fr: FitResult, dm: DesignMatrices,
                      estimator: Estimator | str = Estimator.BC) -> np.ndarray:
    est = Estimator.parse(estimator)
    if est is Estimator.BC:
        return conditional_efficiency(*posterior(fr, dm))
    return np.exp(-jlms(fr, dm))


def predict_frontier(fr: FitResult, dm: DesignMatrices, ds: Dataset | None = None):
    """Frontier (minimum) consumption in kWh and overuse ratio per household.

    Returns ``(frontier_kwh, observed_kwh, overuse_ratio)``.
    """
    xb = dm.X @ fr.pv_hat.beta
    log_dep = fr.spec.log_dependent
    frontier = np.exp(xb) if log_dep else xb
    if ds is not None:
        observed = np.asarray(ds.columns["annual_kwh"], dtype=float)
        if observed.shape != frontier.shape:
            raise ValueError("dataset and design matrices have different lengths")
    else:
        observed = np.exp(dm.y) if log_dep else np.asarray(dm.y, dtype=float)
    return frontier, observed, observed / frontier - 1.0


@dataclass(frozen=True)
class ScoreSummary:
    n: int
    mean: float
    sd: float | None
    min: float
    max: float
    bin_edges: np.ndarray
    counts: np.ndarray

    def as_dict(self) -> dict:
        return {"n": self.n, "mean": self.mean, "sd": self.sd, "min": self.min, "max": self.max}


def histogram(te: np.ndarray, bins: int = DEFAULT_BINS) -> tuple[np.ndarray, np.ndarray]:
    """Equal-width right-closed bins on [0, 1]; bin 0 also takes te == 0."""
    edges = np.linspace(0.0, 1.0, bins + 1)
    idx = np.clip(np.searchsorted(edges, te, side="left") - 1, 0, bins - 1)
    return edges, np.bincount(idx, minlength=bins)


def score_summary(te, bins: int = DEFAULT_BINS) -> ScoreSummary:
    te = np.asarray(te, dtype=float)
    if te.size == 0:
        raise ValueError("no efficiency scores to summarise")
    if not np.all((te > 0) & (te <= 1)):
        raise ValueError("efficiency scores must lie in (0, 1]")
    edges, counts = histogram(te, bins)
    sd = float(np.std(te, ddof=1)) if te.size > 1 else None
    return ScoreSummary(te.size, float(te.mean()), sd, float(te.min()), float(te.max()), edges, counts)


def overuse_shares(ratio, thresholds=OVERUSE_THRESHOLDS) -> dict[float, float]:
    """Share of households consuming at least ``t`` above their frontier."""
    ratio = np.asarray(ratio, dtype=float)
    return {t: float(np.mean(ratio >= t - 1e-12)) for t in thresholds}


@dataclass(frozen=True, eq=False)
class EfficiencyReport:
    ids: tuple[str, ...]
    eps: np.ndarray
    u_jlms: np.ndarray
    te_bc: np.ndarray
    te_exp_jlms: np.ndarray
    frontier_pred_kwh: np.ndarray
    observed_kwh: np.ndarray
    overuse_ratio: np.ndarray
    estimator: Estimator
    summary: ScoreSummary
    overuse: dict

    @property
    def te(self) -> np.ndarray:
        return self.te_bc if self.estimator is Estimator.BC else self.te_exp_jlms

    def headline(self) -> str:
        lines = [f"share ≥ {int(round(100 * t))}%: {100 * s:.1f}% of households use at least "
                 f"{int(round(100 * t))}% above their frontier"
                 for t, s in sorted(self.overuse.items())]
        return "\n".join(lines)


def efficiency_report(fr: FitResult, dm: DesignMatrices, ds: Dataset | None = None,
                      estimator: Estimator | str = Estimator.BC,
                      bins: int = DEFAULT_BINS) -> EfficiencyReport:
    est = Estimator.parse(estimator)
    mu_star, sigma_star = posterior(fr, dm)
    u = conditional_mean_u(mu_star, sigma_star)
    te_bc = conditional_efficiency(mu_star, sigma_star)
    te_j = np.exp(-u)
    frontier, observed, ratio = predict_frontier(fr, dm, ds)
    te = te_bc if est is Estimator.BC else te_j
    ids = tuple(ds.ids) if ds is not None else tuple(dm.ids)
    return EfficiencyReport(
        ids=ids, eps=dm.y - dm.X @ fr.pv_hat.beta, u_jlms=u, te_bc=te_bc, te_exp_jlms=te_j,
        frontier_pred_kwh=frontier, observed_kwh=observed, overuse_ratio=ratio,
        estimator=est, summary=score_summary(te, bins), overuse=overuse_shares(ratio),
    )


def unconditional_mean_efficiency(sigma_u: float) -> float:
    """E[exp(-u)] for u ~ |N(0, sigma_u^2)|: 2 exp(sigma_u^2 / 2) Phi(-sigma_u)."""
    return float(2.0 * np.exp(0.5 * sigma_u**2 + log_norm_cdf(-sigma_u)))
