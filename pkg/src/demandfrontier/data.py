"""Household survey ingestion, validation and descriptive summaries.

A :class:`Dataset` is a validated, immutable column store. Numeric columns are
float arrays keyed by canonical name (``annual_kwh``, ``own_ac``, ``hrs_tv``...);
``housing_type`` and ``id`` are kept as string tuples.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path
from types import MappingProxyType
from typing import Iterable, Mapping, NamedTuple, Sequence

import numpy as np

OWNERSHIP_APPLIANCES = (
    "refrigerator", "ac", "iron", "washing_machine", "exhaust_fan", "tv",
    "laptop", "ceiling_fan", "table_fan", "mixer", "cfl", "led", "bulb",
)
USAGE_APPLIANCES = (
    "refrigerator", "ac", "iron", "ceiling_fan", "table_fan", "washing_machine",
    "exhaust_fan", "tv", "laptop", "cfl", "led", "bulb",
)
HOUSING_TYPES = ("SRH", "SLUM")

HOUSEHOLD_COLUMNS = ("annual_kwh", "wfpr", "hh_size", "avg_hh_age", "income_quartile")
OWN_COLUMNS = tuple(f"own_{a}" for a in OWNERSHIP_APPLIANCES)
HRS_COLUMNS = tuple(f"hrs_{a}" for a in USAGE_APPLIANCES)
NUMERIC_COLUMNS = HOUSEHOLD_COLUMNS + OWN_COLUMNS + HRS_COLUMNS
CANONICAL_COLUMNS = ("id", "housing_type") + NUMERIC_COLUMNS


class DataError(Exception):
    """Base class for ingestion failures."""


class SchemaError(DataError):
    def __init__(self, column: str, message: str | None = None):
        self.column = column
        super().__init__(message or f"missing required column {column!r}")


class RowError(DataError):
    def __init__(self, row: int, column: str, value: str):
        self.row, self.column, self.value = row, column, value
        super().__init__(f"row {row}: cannot parse {value!r} in column {column!r}")


class EmptyDatasetError(DataError):
    pass


class Rejection(NamedTuple):
    row: int
    id: str
    reasons: tuple[str, ...]


class ValidationWarning(NamedTuple):
    row: int
    id: str
    message: str


@dataclass(frozen=True)
class HouseholdRecord:
    id: str
    housing_type: str
    annual_kwh: float
    wfpr: float
    hh_size: int
    avg_hh_age: float
    income_quartile: int
    ownership: Mapping[str, int]
    usage_hours: Mapping[str, float]


@dataclass(frozen=True, eq=False)
class Dataset:
    """Validated household records stored column-wise.

    ``rejections`` and ``warnings`` carry what :func:`load_csv` (or
    :func:`from_columns`) set aside; they are not part of the data.
    """

    ids: tuple[str, ...]
    housing_type: tuple[str, ...]
    columns: Mapping[str, np.ndarray]
    name: str = "dataset"
    rejections: tuple[Rejection, ...] = ()
    warnings: tuple[ValidationWarning, ...] = ()

    @property
    def n(self) -> int:
        return len(self.ids)

    def __len__(self) -> int:
        return self.n

    def __getitem__(self, column: str) -> np.ndarray:
        return self.columns[column]

    def variables(self) -> tuple[str, ...]:
        return tuple(self.columns)

    @property
    def records(self) -> list[HouseholdRecord]:
        return [self.record(i) for i in range(self.n)]

    def record(self, i: int) -> HouseholdRecord:
        c = self.columns
        return HouseholdRecord(
            id=self.ids[i],
            housing_type=self.housing_type[i],
            annual_kwh=float(c["annual_kwh"][i]),
            wfpr=float(c["wfpr"][i]),
            hh_size=int(c["hh_size"][i]),
            avg_hh_age=float(c["avg_hh_age"][i]),
            income_quartile=int(c["income_quartile"][i]),
            ownership={a: int(c[f"own_{a}"][i]) for a in OWNERSHIP_APPLIANCES},
            usage_hours={a: float(c[f"hrs_{a}"][i]) for a in USAGE_APPLIANCES},
        )

    def take(self, index: Sequence[int] | np.ndarray, name: str | None = None) -> "Dataset":
        """Subset/reorder rows (used for permutation tests and splits)."""
        index = np.asarray(index, dtype=int)
        return Dataset(
            ids=tuple(self.ids[i] for i in index),
            housing_type=tuple(self.housing_type[i] for i in index),
            columns=_freeze({k: v[index] for k, v in self.columns.items()}),
            name=name or self.name,
        )

    def with_column(self, column: str, values: np.ndarray) -> "Dataset":
        cols = dict(self.columns)
        cols[column] = np.asarray(values, dtype=float)
        return from_columns(cols, self.ids, self.housing_type, name=self.name)


def _freeze(columns: Mapping[str, np.ndarray]) -> Mapping[str, np.ndarray]:
    out = {}
    for k, v in columns.items():
        arr = np.array(v, dtype=float)
        arr.flags.writeable = False
        out[k] = arr
    return MappingProxyType(out)


def _hard_violations(cols: Mapping[str, np.ndarray], housing: Sequence[str]) -> list[list[str]]:
    """Per-row list of invariant violations that reject the row."""
    n = len(housing)
    reasons: list[list[str]] = [[] for _ in range(n)]

    def flag(mask: np.ndarray, reason: str) -> None:
        for i in np.flatnonzero(mask):
            reasons[i].append(reason)

    for name in NUMERIC_COLUMNS:
        flag(~np.isfinite(cols[name]), f"{name} missing or non-finite")
    with np.errstate(invalid="ignore"):
        flag(~(cols["annual_kwh"] > 0), "annual_kwh > 0")
        w = cols["wfpr"]
        flag(~((w >= 0) & (w <= 1)), "0 <= wfpr <= 1")
        s = cols["hh_size"]
        flag(~((s >= 1) & (s == np.round(s))), "hh_size integer >= 1")
        flag(~(cols["avg_hh_age"] > 0), "avg_hh_age > 0")
        q = cols["income_quartile"]
        flag(~np.isin(q, (1, 2, 3, 4)), "income_quartile in {1,2,3,4}")
        for name in OWN_COLUMNS:
            flag(~np.isin(cols[name], (0, 1)), f"{name} in {{0,1}}")
        for name in HRS_COLUMNS:
            flag(~(cols[name] >= 0), f"{name} >= 0")
    for i, h in enumerate(housing):
        if h not in HOUSING_TYPES:
            reasons[i].append(f"housing_type in {set(HOUSING_TYPES)}")
    return reasons


def _soft_violations(cols: Mapping[str, np.ndarray]) -> list[tuple[int, str]]:
    """(row, message) pairs for usage without ownership, ordered by row then message."""
    msgs = [f"usage_hours[{a}] > 0 but ownership[{a}] = 0" for a in USAGE_APPLIANCES]
    rows, which = [], []
    for k, a in enumerate(USAGE_APPLIANCES):
        hit = np.flatnonzero((cols[f"hrs_{a}"] > 0) & (cols[f"own_{a}"] == 0))
        rows.append(hit)
        which.append(np.full(hit.size, k))
    rows, which = np.concatenate(rows), np.concatenate(which)
    rank = np.argsort(np.argsort(msgs))
    order = np.lexsort((rank[which], rows))
    return [(int(rows[j]), msgs[which[j]]) for j in order]


def from_columns(
    columns: Mapping[str, Iterable[float]],
    ids: Sequence[str],
    housing_type: Sequence[str] | str,
    name: str = "dataset",
) -> Dataset:
    """Validate raw columns and build a Dataset, dropping rows with hard violations."""
    ids = [str(i) for i in ids]
    n = len(ids)
    if isinstance(housing_type, str):
        housing_type = [housing_type] * n
    housing = [str(h).upper() for h in housing_type]
    missing = [c for c in NUMERIC_COLUMNS if c not in columns]
    if missing:
        raise SchemaError(missing[0])
    cols = {c: np.asarray(columns[c], dtype=float) for c in NUMERIC_COLUMNS}
    for c, v in cols.items():
        if v.shape != (n,):
            raise SchemaError(c, f"column {c!r} has length {v.shape} but there are {n} ids")
    if len(set(ids)) != n:
        seen: set[str] = set()
        dup = next(i for i in ids if i in seen or seen.add(i))
        raise DataError(f"duplicate record id {dup!r}")

    hard = _hard_violations(cols, housing)
    keep = np.array([not r for r in hard], dtype=bool)
    rejections = tuple(Rejection(i, ids[i], tuple(r)) for i, r in enumerate(hard) if r)
    warnings = tuple(
        ValidationWarning(i, ids[i], msg) for i, msg in _soft_violations(cols) if keep[i]
    )
    kept = np.flatnonzero(keep)
    return Dataset(
        ids=tuple(ids[i] for i in kept),
        housing_type=tuple(housing[i] for i in kept),
        columns=_freeze({c: v[kept] for c, v in cols.items()}),
        name=name,
        rejections=rejections,
        warnings=warnings,
    )


def load_schema(path: str | Path) -> dict[str, str]:
    """Read a JSON sidecar mapping file header names onto canonical names."""
    with open(path, encoding="utf-8") as fh:
        mapping = json.load(fh)
    if not isinstance(mapping, dict) or not all(
        isinstance(k, str) and isinstance(v, str) for k, v in mapping.items()
    ):
        raise DataError(f"{path}: schema sidecar must be a JSON object of strings")
    unknown = sorted(set(mapping.values()) - set(CANONICAL_COLUMNS))
    if unknown:
        raise DataError(f"{path}: schema maps onto unknown canonical columns {unknown}")
    return mapping


def load_csv(
    path: str | Path,
    schema: Mapping[str, str] | None = None,
    name: str | None = None,
) -> Dataset:
    """Load and validate a household survey CSV.

    ``schema`` maps header names in the file onto canonical column names;
    unmapped headers are used as-is. Rows with missing cells or hard invariant
    violations are rejected (listed in ``Dataset.rejections``); usage hours
    without ownership only produce a warning. A cell that is present but not a
    number raises :class:`RowError`.
    """
    path = Path(path)
    schema = dict(schema or {})
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError("id", f"{path}: no header row") from None
        canon = [schema.get(h.strip(), h.strip()) for h in header]
        for col in CANONICAL_COLUMNS:
            if col not in canon:
                raise SchemaError(col)
        where = {c: canon.index(c) for c in CANONICAL_COLUMNS}
        ids, housing = [], []
        raw: dict[str, list[float]] = {c: [] for c in NUMERIC_COLUMNS}
        for row_no, row in enumerate(reader):
            if not row or all(not cell.strip() for cell in row):
                continue
            row = row + [""] * (len(header) - len(row))
            ids.append(row[where["id"]].strip())
            housing.append(row[where["housing_type"]].strip())
            for c in NUMERIC_COLUMNS:
                cell = row[where[c]].strip()
                if cell == "":
                    raw[c].append(math.nan)
                    continue
                try:
                    raw[c].append(float(cell))
                except ValueError:
                    raise RowError(row_no, c, cell) from None
    return from_columns(raw, ids, housing, name=name or path.stem)


def _fmt(x: float) -> str:
    if float(x).is_integer() and abs(x) < 1e15:
        return str(int(x))
    return repr(float(x))


def write_csv(ds: Dataset, path: str | Path) -> None:
    """Write canonical columns; floats use shortest round-trip repr."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CANONICAL_COLUMNS)
        for i in range(ds.n):
            w.writerow(
                [ds.ids[i], ds.housing_type[i]]
                + [_fmt(ds.columns[c][i]) for c in NUMERIC_COLUMNS]
            )


@dataclass(frozen=True)
class VariableSummary:
    variable: str
    n: int
    mean: float
    sd: float | None
    min: float
    max: float


def summarize(ds: Dataset, variables: Sequence[str] | None = None) -> list[VariableSummary]:
    """Mean, sample SD (divisor n-1), min and max per numeric variable.

    SD is ``None`` when there is a single record.
    """
    if ds.n == 0:
        raise EmptyDatasetError(f"dataset {ds.name!r} has no records")
    out = []
    for v in variables or NUMERIC_COLUMNS:
        x = ds.columns[v]
        sd = float(np.std(x, ddof=1)) if ds.n >= 2 else None
        out.append(VariableSummary(v, ds.n, float(np.mean(x)), sd, float(x.min()), float(x.max())))
    return out


__all__ = [
    "CANONICAL_COLUMNS", "NUMERIC_COLUMNS", "OWNERSHIP_APPLIANCES", "USAGE_APPLIANCES",
    "Dataset", "HouseholdRecord", "Rejection", "ValidationWarning", "VariableSummary",
    "DataError", "SchemaError", "RowError", "EmptyDatasetError",
    "from_columns", "load_csv", "load_schema", "write_csv", "summarize",
]
