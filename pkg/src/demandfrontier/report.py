"""Serialisation: JSON with fixed float formatting, CSV files and text tables.

Every writer is deterministic: floats go out with 17 significant digits in
JSON and 6 decimals in tables, keys keep insertion order, and nothing
time- or host-dependent is recorded.
"""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path
from typing import Any

import numpy as np

from .diagnostics import LR_SIGN_NOTE, LadderReport, stars
from .efficiency import EfficiencyReport
from .mle import Convergence, FitResult, NO_INEFFICIENCY
from .model import Family, ModelSpec
from .sfa import ParameterVector


def _num(x: float) -> str:
    x = float(x)
    if not math.isfinite(x):
        return "null"
    s = format(x, ".17g")
    return s


def dumps(obj: Any, indent: int = 2, _level: int = 0) -> str:
    """json.dumps with floats written as '%.17g' and NaN/Inf as null."""
    pad = " " * (indent * (_level + 1))
    end = " " * (indent * _level)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(str(k))}: {dumps(v, indent, _level + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, (list, tuple, np.ndarray)):
        seq = list(obj)
        if not seq:
            return "[]"
        if all(not isinstance(v, (dict, list, tuple, np.ndarray)) for v in seq):
            return "[" + ", ".join(dumps(v, indent, _level + 1) for v in seq) + "]"
        items = [pad + dumps(v, indent, _level + 1) for v in seq]
        return "[\n" + ",\n".join(items) + "\n" + end + "]"
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if obj is None:
        return "null"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return _num(obj)
    if isinstance(obj, Family):
        return json.dumps(obj.value)
    return json.dumps(str(obj), ensure_ascii=False)


def write_json(obj: Any, path: str | Path) -> None:
    Path(path).write_text(dumps(obj) + "\n", encoding="utf-8")


def _f6(x) -> str:
    if x is None or not np.isfinite(x):
        return ""
    return f"{float(x):.6f}"


def write_rows(path: str | Path, header, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


# --- FitResult ---------------------------------------------------------------

def fit_to_dict(fr: FitResult, n: int | None = None) -> dict:
    c = fr.convergence
    se, z, p = fr.se, fr.z, fr.pvalues
    boundary_warning = NO_INEFFICIENCY if c.boundary else None
    return {
        "family": fr.family.value,
        "spec": fr.spec.to_dict(),
        "n": n,
        "labels": list(fr.labels),
        "theta": fr.theta,
        "loglik": fr.loglik,
        "coefficients": [
            {"label": lab, "estimate": th, "se": s, "z": zz, "p": pp, "stars": stars(pp)}
            for lab, th, s, zz, pp in zip(fr.labels, fr.theta, se, z, p)
        ],
        "cov": None if fr.cov is None else [list(r) for r in fr.cov],
        "derived": fr.derived(),
        "convergence": {
            "iterations": c.iterations, "grad_norm": c.grad_norm, "restarts": c.restarts,
            "wrong_skew_warning": c.wrong_skew_warning, "boundary": c.boundary,
            "converged": c.converged, "rel_ll_change": c.rel_ll_change,
        },
        "warning": boundary_warning,
        "warnings": list(fr.warnings),
        "design_hash": fr.design_hash,
    }


def fit_from_dict(d: dict) -> FitResult:
    spec = ModelSpec.from_dict(d["spec"])
    theta = np.array([math.nan if v is None else v for v in d["theta"]], dtype=float)
    labels = tuple(d["labels"])
    p = sum(1 for lab in labels if lab.startswith("beta:"))
    q = sum(1 for lab in labels if lab.startswith("delta:"))
    pv = ParameterVector.unpack(spec.family, theta, p, q)
    cov = None
    if d.get("cov") is not None:
        cov = np.array([[math.nan if v is None else v for v in row] for row in d["cov"]], dtype=float)
    dv = d["derived"]
    conv = Convergence(**d["convergence"])
    return FitResult(spec, pv, float(d["loglik"]), cov, labels, dv["sigma_v"], dv["sigma_u"],
                     dv["lambda"], dv["sigma2"], conv, tuple(d.get("warnings", ())), d["design_hash"])


def read_fit(path: str | Path) -> FitResult:
    with open(path, encoding="utf-8") as fh:
        return fit_from_dict(json.load(fh))


def coefficient_rows(fr: FitResult) -> list[list[str]]:
    return [
        [lab, _num(th), _num(s), _num(zz), _num(pp), stars(pp)]
        for lab, th, s, zz, pp in zip(fr.labels, fr.theta, fr.se, fr.z, fr.pvalues)
    ]


COEF_HEADER = ["label", "estimate", "se", "z", "p", "stars"]


def coefficient_table(fr: FitResult) -> str:
    lines = [f"{'label':<28}{'estimate':>14}{'se':>12}{'z':>12}{'p':>12}"]
    for lab, th, s, zz, pp in zip(fr.labels, fr.theta, fr.se, fr.z, fr.pvalues):
        lines.append(f"{lab:<28}{_f6(th):>14}{_f6(s):>12}{_f6(zz):>12}{_f6(pp):>12} {stars(pp)}")
    lines.append(f"{'Log-likelihood value':<28}{_f6(fr.loglik):>14}")
    for k, v in fr.derived().items():
        lines.append(f"{k:<28}{_f6(v):>14}")
    return "\n".join(lines)


# --- Ladder -------------------------------------------------------------------

MODEL_TITLES = {
    Family.OLS: "Model 1 (OLS)",
    Family.NHN: "Model 2 (NHN)",
    Family.NHN_HET: "Model 3 (NHN het.)",
    Family.TN: "Model 4 (TN)",
}
FOOTER_ROWS = ("Log-likelihood value", "Wald chi-square", "σ_v", "σ_u",
               "σ² = σ_u² + σ_v²", "λ", "Mean efficiency")


def ladder_to_dict(rep: LadderReport) -> dict:
    models = []
    for r in rep.rows:
        entry = {"family": r.family.value, "ok": r.ok, "error": r.error}
        if r.ok:
            fr = r.fit
            entry.update(
                loglik=fr.loglik,
                wald_chi2=r.wald.chi2 if r.wald else None,
                wald_df=r.wald.df if r.wald else None,
                wald_p=r.wald.p if r.wald else None,
                sigma_v=fr.sigma_v, sigma_u=fr.sigma_u, sigma2=fr.sigma2,
                **{"lambda": fr.lam},
                mean_te=r.mean_te,
                boundary=fr.convergence.boundary,
                coefficients=[{"label": lab, "estimate": th, "p": pp}
                              for lab, th, pp in zip(fr.labels, fr.theta, fr.pvalues)],
            )
        models.append(entry)
    return {
        "dataset": rep.dataset,
        "models": models,
        "lr_tests": rep.lr,
        "recommended": rep.recommended.value if rep.recommended else None,
        "lr_convention": LR_SIGN_NOTE,
    }


def _coef_lookup(fr: FitResult) -> dict[str, tuple[float, float]]:
    return {lab: (th, pp) for lab, th, pp in zip(fr.labels, fr.theta, fr.pvalues)}


def ladder_table(rep: LadderReport) -> str:
    """Aligned text table: frontier block, inefficiency block, footer block."""
    w0, wc, wp = 30, 14, 10
    fams = [r.family for r in rep.rows]
    lk = {r.family: (_coef_lookup(r.fit) if r.ok else {}) for r in rep.rows}

    def line(label, cells):
        return f"{label:<{w0}}" + "".join(f"{a:>{wc}}{b:>{wp}}" for a, b in cells)

    out = [line("", [(MODEL_TITLES[f], "") for f in fams]),
           line("", [("Coefficient", "p-value") for _ in fams]), "Frontier"]
    x_labels, z_labels = [], []
    for r in rep.rows:
        if r.ok:
            for lab in r.fit.labels:
                if lab.startswith("beta:") and lab[5:] not in x_labels:
                    x_labels.append(lab[5:])
                if lab.startswith("delta:") and lab[6:] not in z_labels:
                    z_labels.append(lab[6:])
    order = [v for v in x_labels if v != "const"] + (["const"] if "const" in x_labels else [])
    for v in order:
        cells = []
        for f in fams:
            est = lk[f].get(f"beta:{v}")
            cells.append(("", "") if est is None else (_f6(est[0]), "" if v == "const" else _f6(est[1])))
        out.append(line("Constant" if v == "const" else v, cells))
    out.append("Inefficiencies")
    for v in z_labels:
        cells = []
        for f in fams:
            est = lk[f].get(f"delta:{v}")
            cells.append(("", "") if est is None else (_f6(est[0]), _f6(est[1])))
        out.append(line("Constant" if v == "const" else v, cells))

    def footer(r, key):
        if not r.ok:
            return ("error", "")
        fr = r.fit
        if key == "Log-likelihood value":
            return (_f6(fr.loglik), "")
        if key == "Wald chi-square":
            return ((_f6(r.wald.chi2) + r.wald.stars) if r.wald else "", "")
        if not r.family.is_frontier:
            return ("", "")
        val = {"σ_v": fr.sigma_v, "σ_u": fr.sigma_u, "σ² = σ_u² + σ_v²": fr.sigma2,
               "λ": fr.lam, "Mean efficiency": r.mean_te}[key]
        return (_f6(val), "")

    for key in FOOTER_ROWS:
        out.append(line(key, [footer(r, key) for r in rep.rows]))
    out.append("")
    for e in rep.lr:
        if "error" in e:
            out.append(f"LR {e['restricted']} vs {e['unrestricted']}: {e['error']}")
        else:
            out.append(f"LR {e['restricted']} vs {e['unrestricted']} (df={e['df']}): "
                       f"{_f6(e['LR'])}, 1% critical {e['critical_1pct']:.3f}, "
                       f"{'reject' if e['reject'] else 'do not reject'}")
    for r in rep.rows:
        if r.error:
            out.append(f"{MODEL_TITLES[r.family]}: {r.error}")
    rec = rep.recommended.value if rep.recommended else "none"
    out.append(f"Recommended model: {rec}")
    out.append("Significance: * 10%, ** 5%, *** 1%")
    return "\n".join(out) + "\n"


# --- Efficiency report ----------------------------------------------------------

SCORE_HEADER = ["id", "eps", "u_jlms", "te_bc", "te_exp_jlms", "frontier_pred_kwh",
                "observed_kwh", "overuse_ratio"]


def score_rows(rep: EfficiencyReport) -> list[list[str]]:
    return [
        [i, _num(e), _num(u), _num(b), _num(j), _num(f), _num(o), _num(r)]
        for i, e, u, b, j, f, o, r in zip(rep.ids, rep.eps, rep.u_jlms, rep.te_bc,
                                          rep.te_exp_jlms, rep.frontier_pred_kwh,
                                          rep.observed_kwh, rep.overuse_ratio)
    ]


def summary_to_dict(rep: EfficiencyReport, family: Family) -> dict:
    s = rep.summary
    return {
        "model": family.value,
        "estimator": rep.estimator.value,
        "n": s.n, "mean": s.mean, "sd": s.sd, "min": s.min, "max": s.max,
        "mean_u_jlms": float(np.mean(rep.u_jlms)),
        "overuse": {f"share_ge_{int(round(100 * t))}pct": v for t, v in sorted(rep.overuse.items())},
        "headline": rep.headline().splitlines(),
    }


def histogram_rows(rep: EfficiencyReport) -> list[list[str]]:
    e, c = rep.summary.bin_edges, rep.summary.counts
    return [[f"{e[k]:.6f}", f"{e[k + 1]:.6f}", str(int(c[k]))] for k in range(len(c))]


def frontier_rows(rep: EfficiencyReport) -> list[list[str]]:
    return [[i, _num(o), _num(f), _num(r)]
            for i, o, f, r in zip(rep.ids, rep.observed_kwh, rep.frontier_pred_kwh, rep.overuse_ratio)]
