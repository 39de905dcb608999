"""Likelihood-ratio and Wald tests, variance decomposition, the four-model ladder."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.stats import chi2

from .data import Dataset
from .efficiency import efficiency_scores
from .mle import ConvergenceError, FitResult, fit
from .model import Family, ModelSpec, SpecError, build

LR_SLACK = 1e-6
# 1% critical value for one restricted parameter on the boundary, i.e. the
# 50:50 mixture of chi2(0) and chi2(1) (Kodde-Palm table).
BOUNDARY_CRITICAL_1PCT = {1: 5.412}
LR_SIGN_NOTE = (
    "LR = 2 * (loglik_unrestricted - loglik_restricted), non-negative for nested fits; "
    "writing it as 2 [L(H0) - L(H1)] flips the sign"
)


class NestingViolationError(ValueError):
    """The unrestricted model fits worse than the restricted one."""


class SingularCovarianceError(np.linalg.LinAlgError):
    def __init__(self, message: str, condition_number: float):
        super().__init__(message)
        self.condition_number = condition_number


class BoundaryUnawareWarning(UserWarning):
    pass


def stars(p: float) -> str:
    if not np.isfinite(p):
        return ""
    return "***" if p < 0.01 else "**" if p < 0.05 else "*" if p < 0.10 else ""


@dataclass(frozen=True)
class LrResult:
    lr: float
    df: int
    critical_1pct: float
    reject: bool
    boundary_aware: bool = True
    note: str = LR_SIGN_NOTE


def lr_test(loglik_restricted: float, loglik_unrestricted: float, df: int = 1,
            critical: float | None = None) -> LrResult:
    """LR statistic with the boundary-corrected 1% critical value.

    Values down to ``-1e-6`` are treated as optimiser slack and clamped to 0;
    anything lower raises :class:`NestingViolationError`.
    """
    if not (np.isfinite(loglik_restricted) and np.isfinite(loglik_unrestricted)):
        raise ValueError("log-likelihoods must be finite")
    lr = 2.0 * (loglik_unrestricted - loglik_restricted)
    if lr < -LR_SLACK:
        raise NestingViolationError(
            f"LR = {lr:.6g} < 0: unrestricted loglik {loglik_unrestricted} is below "
            f"restricted {loglik_restricted}"
        )
    lr = max(lr, 0.0)
    aware = True
    if critical is None:
        if df in BOUNDARY_CRITICAL_1PCT:
            critical = BOUNDARY_CRITICAL_1PCT[df]
        else:
            critical = float(chi2.ppf(0.99, df))
            aware = False
            warnings.warn(f"no boundary-corrected critical value for df={df}; "
                          "using plain chi2", BoundaryUnawareWarning, stacklevel=2)
    return LrResult(lr, df, float(critical), lr > critical, aware)


@dataclass(frozen=True)
class WaldResult:
    chi2: float
    df: int
    p: float

    @property
    def stars(self) -> str:
        return stars(self.p)


def slope_indices(fr: FitResult) -> list[int]:
    """Indices of the non-intercept frontier coefficients."""
    return [i for i, lab in enumerate(fr.labels) if lab.startswith("beta:") and lab != "beta:const"]


def wald_joint(fr: FitResult, subset: Sequence[int] | None = None) -> WaldResult:
    """theta_S' cov_SS^{-1} theta_S, chi2 with |S| df (default: frontier slopes)."""
    idx = list(slope_indices(fr) if subset is None else subset)
    if not idx:
        raise ValueError("empty coefficient subset")
    if fr.cov is None:
        raise SingularCovarianceError("covariance unavailable for this fit", math.inf)
    C = fr.cov[np.ix_(idx, idx)]
    th = fr.theta[idx]
    if not np.all(np.isfinite(C)):
        raise SingularCovarianceError("covariance has undefined entries on the subset", math.inf)
    cond = float(np.linalg.cond(C))
    if not np.isfinite(cond) or cond > 1e12:
        raise SingularCovarianceError(f"sub-covariance is singular (condition number {cond:.3g})", cond)
    stat = float(th @ np.linalg.solve(C, th))
    return WaldResult(stat, len(idx), float(chi2.sf(stat, len(idx))))


@dataclass(frozen=True)
class VarianceDecomposition:
    sigma_v: float
    sigma_u: float
    sigma2: float
    lam: float


def decompose(sigma_v: float, sigma_u: float) -> VarianceDecomposition:
    return VarianceDecomposition(sigma_v, sigma_u, sigma_u**2 + sigma_v**2, sigma_u / sigma_v)


def variance_decomposition(fr: FitResult) -> VarianceDecomposition:
    """Recompute sigma_v, sigma_u, sigma^2, lambda and check the stored identities."""
    if fr.family is Family.NHN_HET:
        d = decompose(fr.pv_hat.sigma_v, fr.sigma_u)
    else:
        d = decompose(fr.pv_hat.sigma_v, fr.pv_hat.sigma_u or 0.0)
    for name, a, b in (("sigma2", d.sigma2, fr.sigma2), ("lambda", d.lam, fr.lam)):
        if abs(a - b) > 1e-12 * max(1.0, abs(a)):
            raise AssertionError(f"{name} identity violated: {a!r} vs stored {b!r}")
    return d


@dataclass
class LadderRow:
    family: Family
    fit: FitResult | None = None
    error: str | None = None
    wald: WaldResult | None = None
    mean_te: float | None = None

    @property
    def ok(self) -> bool:
        return self.fit is not None


@dataclass
class LadderReport:
    rows: list[LadderRow]
    lr: list[dict] = field(default_factory=list)
    recommended: Family | None = None
    dataset: str = ""

    def row(self, family: Family | str) -> LadderRow:
        family = Family(family)
        return next(r for r in self.rows if r.family is family)


def ladder_specs(frontier_vars, ineff_vars, **options) -> list[ModelSpec]:
    return [
        ModelSpec(Family.OLS, frontier_vars, **options),
        ModelSpec(Family.NHN, frontier_vars, **options),
        ModelSpec(Family.NHN_HET, frontier_vars, ineff_vars, **options),
        ModelSpec(Family.TN, frontier_vars, ineff_vars, **options),
    ]


def _lr_entry(rows: dict, restricted: Family, unrestricted: Family, df: int) -> dict | None:
    a, b = rows.get(restricted), rows.get(unrestricted)
    if a is None or b is None or not (a.ok and b.ok):
        return None
    entry = {"restricted": restricted.value, "unrestricted": unrestricted.value, "df": df}
    try:
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always", BoundaryUnawareWarning)
            res = lr_test(a.fit.loglik, b.fit.loglik, df)
        entry.update(LR=res.lr, critical_1pct=res.critical_1pct, reject=res.reject,
                     boundary_aware=res.boundary_aware)
        if caught:
            entry["warning"] = str(caught[0].message)
    except NestingViolationError as exc:
        entry.update(error=str(exc))
    return entry


def run_ladder(ds: Dataset, specs: Sequence[ModelSpec]) -> LadderReport:
    """Fit the model ladder and assemble the comparison report.

    A failed fit becomes a row with ``error`` set; the rest still run.
    Recommendation: OLS when the OLS-vs-NHN LR test does not reject,
    otherwise the frontier model with the highest loglik.
    """
    rows: dict[Family, LadderRow] = {}
    for spec in specs:
        row = LadderRow(spec.family)
        try:
            dm = build(spec, ds)
            fr = fit(spec, dm)
            row.fit = fr
            try:
                row.wald = wald_joint(fr)
            except (SingularCovarianceError, ValueError) as exc:
                row.error = f"wald: {exc}"
            if spec.family.is_frontier:
                row.mean_te = float(np.mean(efficiency_scores(fr, dm)))
        except ConvergenceError as exc:
            row.error = str(exc)
        except (SpecError, ValueError, np.linalg.LinAlgError) as exc:
            row.error = str(exc)
        rows[spec.family] = row

    lr = []
    e = _lr_entry(rows, Family.OLS, Family.NHN, 1)
    if e:
        lr.append(e)
    for fam in (Family.NHN_HET, Family.TN):
        r = rows.get(fam)
        if r is not None and r.ok:
            q = r.fit.pv_hat.delta.size
            df = q - 1 if fam is Family.NHN_HET else q
            if df >= 1:
                e = _lr_entry(rows, Family.NHN, fam, df)
                if e:
                    lr.append(e)

    recommended = None
    base = lr[0] if lr and lr[0]["restricted"] == "OLS" else None
    if base is not None and not base.get("reject", False):
        recommended = Family.OLS
    else:
        frontier = [r for r in rows.values() if r.ok and r.family.is_frontier]
        if frontier:
            recommended = max(frontier, key=lambda r: r.fit.loglik).family
        elif Family.OLS in rows and rows[Family.OLS].ok:
            recommended = Family.OLS
    return LadderReport([rows[s.family] for s in specs], lr, recommended, ds.name)
