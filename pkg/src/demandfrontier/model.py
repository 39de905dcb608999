"""Model specifications and design-matrix construction."""

from __future__ import annotations

import enum
import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import scipy.linalg

from .data import Dataset

COLLINEARITY_RTOL = 1e-10


class Family(str, enum.Enum):
    OLS = "OLS"
    NHN = "NHN"
    NHN_HET = "NHN_HET"
    TN = "TN"

    @property
    def is_frontier(self) -> bool:
        return self is not Family.OLS

    @property
    def uses_z(self) -> bool:
        return self in (Family.NHN_HET, Family.TN)


class SpecError(ValueError):
    pass


class CollinearityError(SpecError):
    def __init__(self, column: str, matrix: str = "X"):
        self.column = column
        self.matrix = matrix
        super().__init__(
            f"{matrix} is rank deficient: column {column!r} is (numerically) a linear "
            "combination of earlier columns or has zero variance"
        )


@dataclass(frozen=True)
class ModelSpec:
    """Which variables enter the frontier and the inefficiency function.

    ``income_encoding="onehot"`` expands ``income_quartile`` into dummies for
    quartiles 2-4 (quartile 1 is the baseline).
    """

    family: Family
    frontier_vars: tuple[str, ...]
    ineff_vars: tuple[str, ...] = ()
    log_dependent: bool = True
    include_frontier_intercept: bool = True
    include_ineff_intercept: bool = True
    income_encoding: str = "ordinal"

    def __post_init__(self):
        object.__setattr__(self, "family", Family(self.family))
        object.__setattr__(self, "frontier_vars", tuple(self.frontier_vars))
        object.__setattr__(self, "ineff_vars", tuple(self.ineff_vars))
        if self.family in (Family.OLS, Family.NHN) and self.ineff_vars:
            raise SpecError(f"family {self.family.value} takes no inefficiency variables")
        if not self.frontier_vars and not self.include_frontier_intercept:
            raise SpecError("frontier needs at least one variable or an intercept")
        if self.family.uses_z and not self.ineff_vars and not self.include_ineff_intercept:
            raise SpecError(f"family {self.family.value} needs an inefficiency function")
        for lst, what in ((self.frontier_vars, "frontier_vars"), (self.ineff_vars, "ineff_vars")):
            dup = {v for v in lst if lst.count(v) > 1}
            if dup:
                raise SpecError(f"duplicated variable(s) in {what}: {sorted(dup)}")
        if self.income_encoding not in ("ordinal", "onehot"):
            raise SpecError("income_encoding must be 'ordinal' or 'onehot'")

    def with_family(self, family: Family | str, ineff_vars=None) -> "ModelSpec":
        family = Family(family)
        if ineff_vars is None:
            ineff_vars = self.ineff_vars if family.uses_z else ()
        return ModelSpec(
            family, self.frontier_vars, tuple(ineff_vars), self.log_dependent,
            self.include_frontier_intercept, self.include_ineff_intercept,
            self.income_encoding,
        )

    def to_dict(self) -> dict:
        d = asdict(self)
        d["family"] = self.family.value
        d["frontier_vars"] = list(self.frontier_vars)
        d["ineff_vars"] = list(self.ineff_vars)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        known = {f for f in cls.__dataclass_fields__}
        extra = set(d) - known
        if extra:
            raise SpecError(f"unknown ModelSpec keys: {sorted(extra)}")
        if "family" not in d or "frontier_vars" not in d:
            raise SpecError("ModelSpec needs 'family' and 'frontier_vars'")
        try:
            return cls(**d)
        except (TypeError, ValueError) as exc:
            raise SpecError(str(exc)) from exc


def load_spec(path: str | Path) -> ModelSpec:
    with open(path, encoding="utf-8") as fh:
        return ModelSpec.from_dict(json.load(fh))


@dataclass(frozen=True, eq=False)
class DesignMatrices:
    y: np.ndarray
    X: np.ndarray
    Z: np.ndarray
    labels_X: tuple[str, ...]
    labels_Z: tuple[str, ...]
    spec: ModelSpec
    ids: tuple[str, ...] = field(default=())

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    @property
    def q(self) -> int:
        return self.Z.shape[1]

    def column_hash(self) -> str:
        """SHA-256 over labels and the exact bytes of y, X, Z."""
        h = hashlib.sha256()
        h.update(json.dumps([self.labels_X, self.labels_Z]).encode())
        for a in (self.y, self.X, self.Z):
            h.update(np.ascontiguousarray(a, dtype="<f8").tobytes())
        return h.hexdigest()


def _columns(names, ds: Dataset, encoding: str) -> tuple[list[np.ndarray], list[str]]:
    cols, labels = [], []
    for v in names:
        if v == "income_quartile" and encoding == "onehot":
            q = ds.columns[v]
            for k in (2, 3, 4):
                cols.append((q == k).astype(float))
                labels.append(f"income_q{k}")
            continue
        if v not in ds.columns:
            raise SpecError(f"unknown variable {v!r}")
        cols.append(np.asarray(ds.columns[v], dtype=float))
        labels.append(v)
    return cols, labels


def _assemble(cols, labels, intercept: bool, n: int, name: str):
    if intercept:
        cols = [np.ones(n)] + cols
        labels = ["const"] + labels
    M = np.column_stack(cols) if cols else np.empty((n, 0))
    if not np.all(np.isfinite(M)):
        raise SpecError(f"{name} contains NaN/Inf")
    check_rank(M, labels, name)
    return M, tuple(labels)


def check_rank(M: np.ndarray, labels, name: str = "X") -> None:
    """Raise CollinearityError naming the first dependent column.

    The reported column is the first one (in declaration order) that adds no
    new direction to the columns before it.
    """
    k = M.shape[1]
    if k == 0:
        return
    scale = np.linalg.norm(M, axis=0)
    if np.any(scale == 0):
        raise CollinearityError(labels[int(np.argmax(scale == 0))], name)
    # without pivoting, |R_jj| is the distance of column j from the span of
    # the columns before it (all scaled to unit norm)
    r = np.abs(np.diag(scipy.linalg.qr(M / scale, mode="r")[0]))
    if r.shape[0] < k:
        raise CollinearityError(labels[r.shape[0]], name)
    bad = np.flatnonzero(r <= COLLINEARITY_RTOL * r.max())
    if bad.size:
        raise CollinearityError(labels[bad[0]], name)


def build(spec: ModelSpec, ds: Dataset) -> DesignMatrices:
    """Build y, X and Z for ``spec`` from ``ds``; intercept columns come first."""
    n = ds.n
    if n == 0:
        raise SpecError("empty dataset")
    kwh = np.asarray(ds.columns["annual_kwh"], dtype=float)
    y = np.log(kwh) if spec.log_dependent else kwh.copy()
    xc, xl = _columns(spec.frontier_vars, ds, spec.income_encoding)
    X, labels_X = _assemble(xc, xl, spec.include_frontier_intercept, n, "X")
    if spec.family.uses_z:
        zc, zl = _columns(spec.ineff_vars, ds, spec.income_encoding)
        Z, labels_Z = _assemble(zc, zl, spec.include_ineff_intercept, n, "Z")
    else:
        Z, labels_Z = np.empty((n, 0)), ()
    for a in (y, X, Z):
        a.flags.writeable = False
    return DesignMatrices(y, X, Z, labels_X, labels_Z, spec, tuple(ds.ids))
