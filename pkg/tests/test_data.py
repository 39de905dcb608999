import csv
import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from demandfrontier.data import (
    CANONICAL_COLUMNS,
    NUMERIC_COLUMNS,
    DataError,
    EmptyDatasetError,
    RowError,
    SchemaError,
    from_columns,
    load_csv,
    load_schema,
    summarize,
    write_csv,
)
from demandfrontier.simulate import fixture_table2


def _row(i, **over):
    base = {c: 0 for c in NUMERIC_COLUMNS}
    base.update(annual_kwh=1500.0 + i, wfpr=0.5, hh_size=4, avg_hh_age=30.5, income_quartile=2)
    base.update(over)
    return {"id": f"h{i}", "housing_type": "SRH", **base}


def _write(path, rows, header=CANONICAL_COLUMNS):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow([r.get(c, "") for c in CANONICAL_COLUMNS])
    return path


def test_three_valid_rows(tmp_path):
    ds = load_csv(_write(tmp_path / "a.csv", [_row(i) for i in range(3)]))
    assert ds.n == 3
    assert ds.ids == ("h0", "h1", "h2")
    assert not ds.rejections and not ds.warnings


def test_zero_kwh_rejected(tmp_path):
    ds = load_csv(_write(tmp_path / "a.csv", [_row(0), _row(1, annual_kwh=0)]))
    assert ds.n == 1
    assert ds.rejections[0].row == 1
    assert "annual_kwh > 0" in ds.rejections[0].reasons


def test_usage_without_ownership_is_warning(tmp_path):
    ds = load_csv(_write(tmp_path / "a.csv", [_row(0, hrs_tv=4, own_tv=0)]))
    assert ds.n == 1
    assert len(ds.warnings) == 1
    assert "tv" in ds.warnings[0].message


@pytest.mark.parametrize("over,reason", [
    ({"wfpr": 1.2}, "0 <= wfpr <= 1"),
    ({"income_quartile": 5}, "income_quartile in {1,2,3,4}"),
    ({"hh_size": 0}, "hh_size integer >= 1"),
    ({"own_ac": 2}, "own_ac in {0,1}"),
    ({"hrs_led": -1}, "hrs_led >= 0"),
])
def test_hard_violations(tmp_path, over, reason):
    ds = load_csv(_write(tmp_path / "a.csv", [_row(0), _row(1, **over)]))
    assert ds.n == 1 and reason in ds.rejections[0].reasons


def test_missing_cell_rejects_row(tmp_path):
    rows = [_row(0), _row(1)]
    rows[1]["wfpr"] = ""
    ds = load_csv(_write(tmp_path / "a.csv", rows))
    assert ds.n == 1 and ds.rejections[0].id == "h1"


def test_unparseable_cell(tmp_path):
    rows = [_row(0, avg_hh_age="abc")]
    with pytest.raises(RowError) as e:
        load_csv(_write(tmp_path / "a.csv", rows))
    assert e.value.row == 0 and e.value.column == "avg_hh_age"


def test_missing_column_named(tmp_path):
    header = [c for c in CANONICAL_COLUMNS if c != "hrs_tv"]
    p = tmp_path / "a.csv"
    with open(p, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerow([_row(0)[c] for c in header])
    with pytest.raises(SchemaError) as e:
        load_csv(p)
    assert e.value.column == "hrs_tv"


def test_schema_sidecar(tmp_path):
    header = ["HHID" if c == "id" else "kWh" if c == "annual_kwh" else c for c in CANONICAL_COLUMNS]
    p = _write(tmp_path / "a.csv", [_row(0)], header)
    sp = tmp_path / "schema.json"
    sp.write_text(json.dumps({"HHID": "id", "kWh": "annual_kwh"}))
    ds = load_csv(p, load_schema(sp))
    assert ds.ids == ("h0",) and ds["annual_kwh"][0] == 1500.0


def test_schema_sidecar_unknown_target(tmp_path):
    sp = tmp_path / "schema.json"
    sp.write_text(json.dumps({"x": "not_a_column"}))
    with pytest.raises(DataError):
        load_schema(sp)


def test_duplicate_ids():
    cols = {c: np.array([1.0, 1.0]) for c in NUMERIC_COLUMNS}
    with pytest.raises(DataError):
        from_columns(cols, ["a", "a"], "SRH")


def test_counts_add_up(tmp_path):
    rows = [_row(i, annual_kwh=(0 if i % 3 == 0 else 100.0)) for i in range(10)]
    ds = load_csv(_write(tmp_path / "a.csv", rows))
    assert ds.n + len(ds.rejections) == 10
    assert not set(ds.ids) & {r.id for r in ds.rejections}


def test_dataset_is_read_only():
    ds = fixture_table2("SRH", 5, 1)
    with pytest.raises(ValueError):
        ds["wfpr"][0] = 0.3
    with pytest.raises(TypeError):
        ds.columns["wfpr"] = np.zeros(5)


def test_records_view():
    ds = fixture_table2("SLUM", 3, 2)
    rec = ds.records[1]
    assert rec.id == ds.ids[1] and rec.housing_type == "SLUM"
    assert rec.annual_kwh == ds["annual_kwh"][1]
    assert set(rec.ownership) >= {"refrigerator", "ac", "bulb"}


def test_write_load_round_trip(tmp_path):
    ds = fixture_table2("SRH", 40, 3)
    write_csv(ds, tmp_path / "d.csv")
    back = load_csv(tmp_path / "d.csv")
    assert back.ids == ds.ids and back.housing_type == ds.housing_type
    for c in NUMERIC_COLUMNS:
        assert np.array_equal(back[c], ds[c]), c


def _two_pass(x):
    m = math.fsum(x) / len(x)
    return m, math.sqrt(math.fsum((v - m) ** 2 for v in x) / (len(x) - 1))


def test_summary_matches_two_pass_oracle():
    ds = fixture_table2("SRH", 2000, 4)
    for s in summarize(ds):
        x = [float(v) for v in ds[s.variable]]
        m, sd = _two_pass(x)
        assert s.mean == pytest.approx(m, rel=1e-12, abs=1e-12)
        assert s.sd == pytest.approx(sd, rel=1e-12, abs=1e-12)
        assert s.min == min(x) and s.max == max(x)


def test_single_record_summary():
    ds = fixture_table2("SRH", 1, 5)
    s = summarize(ds, ["annual_kwh"])[0]
    assert s.sd is None and s.mean == s.min == s.max


def test_constant_column_sd_zero():
    ds = fixture_table2("SRH", 10, 6).with_column("avg_hh_age", np.full(10, 33.0))
    assert summarize(ds, ["avg_hh_age"])[0].sd == 0.0


def test_empty_dataset_summary():
    ds = fixture_table2("SRH", 3, 7).take([])
    with pytest.raises(EmptyDatasetError):
        summarize(ds)


@given(st.permutations(list(range(12))))
def test_summary_permutation_invariant(perm):
    ds = fixture_table2("SLUM", 12, 8)
    a = summarize(ds)
    b = summarize(ds.take(perm))
    for x, y in zip(a, b):
        assert x.mean == pytest.approx(y.mean, rel=1e-14)
        assert x.sd == pytest.approx(y.sd, rel=1e-12, abs=1e-14)
        assert (x.min, x.max) == (y.min, y.max)
