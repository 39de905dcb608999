"""Synthetic data-generating processes and Monte-Carlo calibration.

All randomness flows from an explicit integer seed through numpy's PCG64
bit generator. Truncated-normal inefficiency is drawn by inverse CDF (no
rejection loop), so draw counts and outputs are fixed by the seed.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace
from typing import Mapping

import numpy as np
from scipy.special import log_ndtr, ndtri_exp

from .data import (
    HOUSING_TYPES,
    NUMERIC_COLUMNS,
    Dataset,
    from_columns,
)
from .model import Family, ModelSpec, build

# Survey marginals: variable -> (mean, sd, min, max). Binary columns only
# use the mean.
TABLE2 = {
    "SRH": {
        "annual_kwh": (1583.800, 556.881, 351.0, 3107.0),
        "wfpr": (0.348, 0.154, 0.0, 1.0),
        "hh_size": (4.192, 1.325, 2.0, 10.0),
        "avg_hh_age": (31.574, 8.544, 13.0, 65.0),
        "income_quartile": (2.939, 0.737, 1.0, 4.0),
        "own_refrigerator": (0.9,), "own_ac": (0.022,), "own_iron": (0.536,),
        "own_washing_machine": (0.15,), "own_exhaust_fan": (0.243,), "own_tv": (0.939,),
        "own_laptop": (0.005,), "own_ceiling_fan": (1.0,), "own_table_fan": (0.036,),
        "own_mixer": (0.863,), "own_cfl": (0.375,), "own_led": (0.957,), "own_bulb": (0.081,),
        "hrs_refrigerator": (21.612, 7.193, 0.0, 24.0),
        "hrs_ac": (0.056, 0.4, 0.0, 4.0),
        "hrs_iron": (0.731, 0.766, 0.0, 2.0),
        "hrs_ceiling_fan": (26.454, 10.637, 7.0, 46.0),
        "hrs_table_fan": (0.357, 1.935, 0.0, 15.0),
        "hrs_washing_machine": (0.117, 0.39, 0.0, 2.0),
        "hrs_exhaust_fan": (0.34, 0.67, 0.0, 4.0),
        "hrs_tv": (4.964, 2.334, 0.0, 10.0),
        "hrs_laptop": (0.01, 0.139, 0.0, 2.0),
        "hrs_cfl": (1.690, 2.602, 0.0, 15.0),
        "hrs_led": (17.378, 11.967, 0.0, 40.0),
        "hrs_bulb": (0.254, 0.592, 0.0, 4.0),
    },
    "SLUM": {
        "annual_kwh": (1612.908, 593.892, 351.0, 3328.0),
        "wfpr": (0.365, 0.169, 0.0, 1.0),
        "hh_size": (4.014, 1.131, 2.0, 8.0),
        "avg_hh_age": (33.627, 8.886, 14.25, 62.5),
        "income_quartile": (2.878, 0.815, 1.0, 4.0),
        "own_refrigerator": (0.817,), "own_ac": (0.028,), "own_iron": (0.362,),
        "own_washing_machine": (0.155,), "own_exhaust_fan": (0.315,), "own_tv": (0.962,),
        "own_laptop": (0.038,), "own_ceiling_fan": (0.981,), "own_table_fan": (0.056,),
        "own_mixer": (0.716,), "own_cfl": (0.505,), "own_led": (0.971,), "own_bulb": (0.059,),
        "hrs_refrigerator": (19.606, 9.304, 0.0, 24.0),
        "hrs_ac": (0.08, 0.539, 0.0, 5.0),
        "hrs_iron": (0.502, 0.731, 0.0, 2.0),
        "hrs_ceiling_fan": (22.033, 11.609, 0.0, 48.0),
        "hrs_table_fan": (0.512, 2.523, 0.0, 18.0),
        "hrs_washing_machine": (0.141, 0.433, 0.0, 2.0),
        "hrs_exhaust_fan": (0.446, 0.754, 0.0, 4.0),
        "hrs_tv": (4.211, 1.673, 0.0, 10.0),
        "hrs_laptop": (0.042, 0.263, 0.0, 2.0),
        "hrs_cfl": (3.441, 3.964, 0.0, 15.0),
        "hrs_led": (13.574, 7.752, 0.0, 32.0),
        "hrs_bulb": (0.127, 0.777, 0.0, 10.0),
    },
}
_INTEGER = ("hh_size", "income_quartile")


def _scaled_beta(rng, mean, sd, lo, hi, n):
    """Beta on [lo, hi] with the given mean and SD.

    Moments match exactly when feasible. Rounded survey moments can
    exceed the largest variance possible on the range (SRH refrigerator hours);
    the variance is then capped at 99% of that bound.
    """
    if sd == 0 or hi == lo:
        return np.full(n, mean)
    m = (mean - lo) / (hi - lo)
    v = min((sd / (hi - lo)) ** 2, 0.99 * m * (1 - m))
    k = m * (1 - m) / v - 1
    return lo + (hi - lo) * rng.beta(m * k, (1 - m) * k, size=n)


def _marginal(rng, name, params, n):
    if len(params) == 1:
        return (rng.random(n) < params[0]).astype(float)
    x = _scaled_beta(rng, *params, n)
    if name in _INTEGER:
        x = np.clip(np.round(x), params[2], params[3])
    return x


def _child_rngs(seed: int, k: int) -> list[np.random.Generator]:
    ss = np.random.SeedSequence(int(seed))
    return [np.random.Generator(np.random.PCG64(s)) for s in ss.spawn(k)]


def fixture_columns(housing: str, n: int, seed: int) -> dict[str, np.ndarray]:
    housing = housing.upper()
    if housing not in HOUSING_TYPES:
        raise ValueError(f"housing must be one of {HOUSING_TYPES}")
    table = TABLE2[housing]
    # one independent stream per column, so adding a column never shifts others
    rngs = _child_rngs(seed, len(NUMERIC_COLUMNS))
    return {c: _marginal(r, c, table[c], n) for c, r in zip(NUMERIC_COLUMNS, rngs)}


def _ids(housing: str, n: int) -> list[str]:
    return [f"{housing.lower()}-{i:06d}" for i in range(n)]


def fixture_table2(housing: str, n: int, seed: int) -> Dataset:
    """Survey-shaped household sample with independent marginals.

    Continuous and ordinal columns use Beta laws rescaled to the published
    range with the published mean and SD; ownership dummies are Bernoulli.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    housing = housing.upper()
    cols = fixture_columns(housing, n, seed)
    return from_columns(cols, _ids(housing, n), housing, name=f"fixture-{housing.lower()}")


@dataclass(frozen=True)
class Covariate:
    """Generator for one covariate column.

    kind: ``uniform`` (low, high) | ``bernoulli`` (p,) |
    ``categorical`` (values, probabilities).
    """

    kind: str
    params: tuple

    def __post_init__(self):
        arity = {"uniform": 2, "bernoulli": 1, "categorical": 2}
        if self.kind not in arity:
            raise ValueError(f"unknown covariate kind {self.kind!r}")
        if not isinstance(self.params, (tuple, list)) or len(self.params) != arity[self.kind]:
            raise ValueError(f"{self.kind} covariate needs {arity[self.kind]} positional params")

    def draw(self, rng: np.random.Generator, n: int) -> np.ndarray:
        if self.kind == "uniform":
            lo, hi = self.params
            return rng.uniform(lo, hi, size=n)
        if self.kind == "bernoulli":
            (p,) = self.params
            return (rng.random(n) < p).astype(float)
        if self.kind == "categorical":
            values, probs = self.params
            return np.asarray(values, dtype=float)[rng.choice(len(values), size=n, p=probs)]
        raise ValueError(f"unknown covariate kind {self.kind!r}")

    def to_dict(self) -> dict:
        return {"kind": self.kind, "params": _listify(self.params)}

    @classmethod
    def from_dict(cls, d: Mapping) -> "Covariate":
        return cls(d["kind"], _tuplify(d["params"]))


def _listify(x):
    return [_listify(v) for v in x] if isinstance(x, (list, tuple)) else x


def _tuplify(x):
    return tuple(_tuplify(v) for v in x) if isinstance(x, (list, tuple)) else x


@dataclass(frozen=True)
class DgpSpec:
    """Forward model ``ln kWh = X beta + v + u``.

    ``sigma_u`` is the half-normal scale (NHN) or the pre-truncation SD (TN);
    ``delta`` gives ``ln sigma_u_i^2 = Z delta`` (NHN_HET) or ``mu_i = Z delta``
    (TN). Covariates not listed in ``covariates`` come from the survey fixture
    for ``housing``.
    """

    family: Family
    beta: tuple[float, ...]
    sigma_v: float
    n: int
    seed: int
    frontier_vars: tuple[str, ...]
    sigma_u: float = 0.0
    delta: tuple[float, ...] = ()
    ineff_vars: tuple[str, ...] = ()
    covariates: Mapping[str, Covariate] = field(default_factory=dict)
    housing: str = "SRH"

    def __post_init__(self):
        object.__setattr__(self, "family", Family(self.family))
        object.__setattr__(self, "beta", tuple(float(b) for b in self.beta))
        object.__setattr__(self, "delta", tuple(float(d) for d in self.delta))
        object.__setattr__(self, "frontier_vars", tuple(self.frontier_vars))
        object.__setattr__(self, "ineff_vars", tuple(self.ineff_vars))
        if self.seed is None:
            raise ValueError("seed is mandatory")
        if self.sigma_v < 0 or self.sigma_u < 0:
            raise ValueError("scale parameters must be non-negative")
        if len(self.beta) != len(self.frontier_vars) + 1:
            raise ValueError("beta needs an intercept plus one slope per frontier variable")
        if self.family.uses_z and len(self.delta) != len(self.ineff_vars) + 1:
            raise ValueError("delta needs an intercept plus one entry per ineff variable")

    def model_spec(self, family: Family | str | None = None) -> ModelSpec:
        family = Family(family or self.family)
        return ModelSpec(family, self.frontier_vars, self.ineff_vars if family.uses_z else ())

    def truth_theta(self, family: Family | str | None = None) -> np.ndarray:
        """True parameters in the estimator's packed (log-variance) layout."""
        family = Family(family or self.family)
        theta_v = 2.0 * math.log(self.sigma_v)
        parts = [list(self.beta), [theta_v]]
        if family is Family.NHN:
            parts.append([2.0 * math.log(self.sigma_u) if self.sigma_u > 0 else -math.inf])
        elif family is Family.NHN_HET:
            parts.append(list(self.delta))
        elif family is Family.TN:
            parts += [list(self.delta), [2.0 * math.log(self.sigma_u)]]
        return np.concatenate([np.asarray(p, dtype=float) for p in parts])

    def with_seed(self, seed: int) -> "DgpSpec":
        return replace(self, seed=int(seed))

    def to_dict(self) -> dict:
        return {
            "family": self.family.value, "beta": list(self.beta), "sigma_v": self.sigma_v,
            "sigma_u": self.sigma_u, "delta": list(self.delta), "n": self.n, "seed": self.seed,
            "frontier_vars": list(self.frontier_vars), "ineff_vars": list(self.ineff_vars),
            "covariates": {k: v.to_dict() for k, v in self.covariates.items()},
            "housing": self.housing,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "DgpSpec":
        d = dict(d)
        d["covariates"] = {k: Covariate.from_dict(v) for k, v in d.get("covariates", {}).items()}
        return cls(**d)


@dataclass(frozen=True, eq=False)
class Simulated:
    dataset: Dataset
    v: np.ndarray
    u: np.ndarray
    eps: np.ndarray
    frontier: np.ndarray  # X beta, on the log scale
    dgp: DgpSpec

    def truth_dict(self) -> dict:
        return {"dgp": self.dgp.to_dict(), "id": list(self.dataset.ids),
                "v": self.v.tolist(), "u": self.u.tolist(), "eps": self.eps.tolist(),
                "frontier": self.frontier.tolist()}


def truncnorm_lower0(rng: np.random.Generator, mu: np.ndarray, sigma: float) -> np.ndarray:
    """N(mu, sigma^2) truncated to [0, inf) by inverse CDF in log space.

    Uses the survival form ``x = -Phi^{-1}((1 - p) Phi(-alpha))`` with
    ``alpha = -mu / sigma``, which stays exact for deep-tail means.
    """
    mu = np.asarray(mu, dtype=float)
    p = rng.random(mu.shape)
    alpha = -mu / sigma
    x = -ndtri_exp(np.log1p(-p) + log_ndtr(-alpha))
    return np.maximum(mu + sigma * x, 0.0)


def generate(dgp: DgpSpec) -> Simulated:
    """Draw one dataset from ``dgp``; identical seeds give identical output."""
    n = dgp.n
    r_fix, r_cov, r_v, r_u = _child_rngs(dgp.seed, 4)
    cols = fixture_columns(dgp.housing, n, int(r_fix.integers(2**63)))
    cov_rngs = _child_rngs(int(r_cov.integers(2**63)), max(len(dgp.covariates), 1))
    for (name, gen), r in zip(sorted(dgp.covariates.items()), cov_rngs):
        if name not in cols:
            raise ValueError(f"unknown covariate {name!r}")
        cols[name] = gen.draw(r, n)
    X = np.column_stack([np.ones(n)] + [cols[v] for v in dgp.frontier_vars])
    frontier = X @ np.asarray(dgp.beta)
    v = r_v.normal(0.0, 1.0, n) * dgp.sigma_v
    fam = dgp.family
    if fam is Family.OLS:
        u = np.zeros(n)
    elif fam is Family.NHN:
        u = np.abs(r_u.normal(0.0, 1.0, n)) * dgp.sigma_u
    else:
        Z = np.column_stack([np.ones(n)] + [cols[w] for w in dgp.ineff_vars])
        zd = Z @ np.asarray(dgp.delta)
        if fam is Family.NHN_HET:
            u = np.abs(r_u.normal(0.0, 1.0, n)) * np.exp(0.5 * zd)
        else:
            u = truncnorm_lower0(r_u, zd, dgp.sigma_u) if dgp.sigma_u > 0 else np.maximum(zd, 0.0)
    eps = v + u
    cols["annual_kwh"] = np.exp(frontier + eps)
    ds = from_columns(cols, _ids(dgp.housing, n), dgp.housing, name=f"dgp-{fam.value.lower()}")
    if ds.n != n:
        raise ValueError(f"generated {n - ds.n} invalid rows: {ds.rejections[:3]}")
    return Simulated(ds, v, u, eps, frontier, dgp)


@dataclass(frozen=True)
class CalibrationRow:
    parameter: str
    truth: float
    mean: float
    bias: float
    mc_se: float
    rmse: float
    coverage: float

    @property
    def bias_ok(self) -> bool:
        return abs(self.bias) <= 2.0 * self.mc_se


@dataclass(frozen=True)
class CalibrationTable:
    family: Family
    replications: int
    rows: tuple[CalibrationRow, ...]
    failures: int
    boundary_count: int
    elapsed: float
    estimates: np.ndarray = field(repr=False, default=None)

    def row(self, parameter: str) -> CalibrationRow:
        return next(r for r in self.rows if r.parameter == parameter)

    def to_text(self) -> str:
        head = f"{'parameter':<18}{'truth':>10}{'mean':>12}{'bias':>12}{'mc_se':>10}{'rmse':>10}{'cover95':>9}"
        lines = [head]
        for r in self.rows:
            lines.append(f"{r.parameter:<18}{r.truth:>10.4f}{r.mean:>12.6f}{r.bias:>12.6f}"
                         f"{r.mc_se:>10.6f}{r.rmse:>10.6f}{r.coverage:>9.3f}")
        lines.append(f"replications={self.replications} failures={self.failures} "
                     f"boundary={self.boundary_count} elapsed={self.elapsed:.1f}s")
        return "\n".join(lines)


def replication_seeds(seed: int, replications: int) -> list[int]:
    return [int(s.generate_state(1, np.uint64)[0])
            for s in np.random.SeedSequence(int(seed)).spawn(replications)]


def monte_carlo(dgp: DgpSpec, replications: int, family: Family | str | None = None,
                level: float = 0.95) -> CalibrationTable:
    """Refit ``replications`` fresh draws; bias, RMSE and Wald coverage per parameter.

    Coverage is computed on the packed (log-variance) scale. Fit failures are
    counted and skipped; a sigma_u collapse to the floor is counted in
    ``boundary_count``.
    """
    from scipy.stats import norm

    from .mle import ConvergenceError, fit
    from .sfa import param_labels

    if replications < 2:
        raise ValueError("replications must be >= 2")
    family = Family(family or dgp.family)
    spec = dgp.model_spec(family)
    truth = dgp.truth_theta(family)
    zcrit = norm.ppf(0.5 + level / 2.0)
    t0 = time.perf_counter()
    est, se, failures, boundary, labels = [], [], 0, 0, None
    for s in replication_seeds(dgp.seed, replications):
        sim = generate(dgp.with_seed(s))
        dm = build(spec, sim.dataset)
        try:
            fr = fit(spec, dm)
        except (ConvergenceError, ValueError, np.linalg.LinAlgError):
            failures += 1
            continue
        labels = labels or param_labels(dm, family)
        boundary += fr.convergence.boundary
        est.append(fr.theta)
        se.append(fr.se)
    elapsed = time.perf_counter() - t0
    est_a, se_a = np.array(est), np.array(se)
    rows = []
    for j, name in enumerate(labels or []):
        x = est_a[:, j]
        bias = float(x.mean() - truth[j])
        mc_se = float(x.std(ddof=1) / math.sqrt(len(x))) if len(x) > 1 else math.nan
        rmse = float(np.sqrt(np.mean((x - truth[j]) ** 2)))
        with np.errstate(invalid="ignore"):
            cover = np.abs(x - truth[j]) <= zcrit * se_a[:, j]
        rows.append(CalibrationRow(name, float(truth[j]), float(x.mean()), bias, mc_se, rmse,
                                   float(np.mean(cover))))
    return CalibrationTable(family, replications, tuple(rows), failures, boundary, elapsed, est_a)
