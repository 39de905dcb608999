"""Command-line entry point.

    demandfrontier fit       --input data.csv --spec spec.json --out results/
    demandfrontier ladder    --input data.csv --spec spec.json --out results/
    demandfrontier score     --input data.csv --fit results/fit.json --out results/
    demandfrontier simulate  --out sim/ [--spec dgp.json] [--housing SRH --n 412] --seed 7
    demandfrontier summarize --input data.csv --out results/

Exit codes: 0 success, 2 input error, 3 convergence failure, 4 internal
invariant violation.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import report
from .data import DataError, load_csv, load_schema, summarize, write_csv
from .diagnostics import ladder_specs, run_ladder
from .efficiency import Estimator, efficiency_report
from .mle import CertificationError, ConvergenceError, certify, fit
from .model import SpecError, build, load_spec
from .simulate import DgpSpec, fixture_table2, generate

EXIT_OK, EXIT_INPUT, EXIT_CONVERGENCE, EXIT_INVARIANT = 0, 2, 3, 4


class InputError(Exception):
    pass


class InvariantError(Exception):
    pass


def _require(path: str | None, what: str) -> Path:
    if not path:
        raise InputError(f"--{what} is required")
    p = Path(path)
    if not p.is_file():
        raise InputError(f"{what} file not found: {p}")
    return p


def _out(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _dataset(args):
    path = _require(args.input, "input")
    schema = load_schema(_require(args.schema, "schema")) if args.schema else None
    ds = load_csv(path, schema)
    for r in ds.rejections:
        print(f"rejected row {r.row} ({r.id}): {'; '.join(r.reasons)}", file=sys.stderr)
    if ds.n == 0:
        raise InputError(f"{path}: no valid rows")
    return ds


def _emit(args, json_obj, csv_header, csv_rows, table: str) -> None:
    if args.quiet:
        return
    if args.format == "json":
        print(report.dumps(json_obj))
    elif args.format == "csv":
        print(",".join(csv_header))
        for row in csv_rows:
            print(",".join(str(c) for c in row))
    else:
        print(table)


def cmd_fit(args) -> int:
    ds = _dataset(args)
    spec = load_spec(_require(args.spec, "spec"))
    dm = build(spec, ds)
    fr = fit(spec, dm)
    try:
        certify(fr, dm)
    except CertificationError as exc:
        raise InvariantError(f"certification failed: {exc}") from exc
    out = _out(args)
    d = report.fit_to_dict(fr, dm.n)
    report.write_json(d, out / "fit.json")
    rows = report.coefficient_rows(fr)
    report.write_rows(out / "coefficients.csv", report.COEF_HEADER, rows)
    _emit(args, d, report.COEF_HEADER, rows, report.coefficient_table(fr))
    if fr.convergence.boundary:
        print(f"warning: {d['warning']}", file=sys.stderr)
    return EXIT_OK


def _ladder_spec(path: Path):
    with open(path, encoding="utf-8") as fh:
        d = json.load(fh)
    if "frontier_vars" not in d:
        raise SpecError("ladder spec needs 'frontier_vars'")
    opts = {k: d[k] for k in ("log_dependent", "include_frontier_intercept",
                              "include_ineff_intercept", "income_encoding") if k in d}
    return ladder_specs(tuple(d["frontier_vars"]), tuple(d.get("ineff_vars", ())), **opts)


def cmd_ladder(args) -> int:
    ds = _dataset(args)
    specs = _ladder_spec(_require(args.spec, "spec"))
    rep = run_ladder(ds, specs)
    out = _out(args)
    d = report.ladder_to_dict(rep)
    table = report.ladder_table(rep)
    report.write_json(d, out / "ladder.json")
    (out / "ladder.txt").write_text(table, encoding="utf-8")
    _emit(args, d, ["family", "loglik"],
          [[m["family"], m.get("loglik", "")] for m in d["models"]], table)
    return EXIT_OK if any(r.ok for r in rep.rows) else EXIT_CONVERGENCE


def cmd_score(args) -> int:
    ds = _dataset(args)
    out = _out(args)
    fit_path = Path(args.fit) if args.fit else out / "fit.json"
    fr = report.read_fit(_require(str(fit_path), "fit"))
    dm = build(fr.spec, ds)
    if dm.column_hash() != fr.design_hash:
        raise InputError(f"{fit_path} was fitted on different data (design hash mismatch)")
    rep = efficiency_report(fr, dm, ds, Estimator.parse(args.te), args.bins)
    for name, te in (("te_bc", rep.te_bc), ("te_exp_jlms", rep.te_exp_jlms)):
        if not np.all((te > 0) & (te <= 1)):
            raise InvariantError(f"{name} outside (0, 1]")
    if not np.all(rep.u_jlms >= 0) or not np.all(rep.frontier_pred_kwh > 0):
        raise InvariantError("negative inefficiency or non-positive frontier prediction")
    summary = report.summary_to_dict(rep, fr.family)
    report.write_rows(out / "scores.csv", report.SCORE_HEADER, report.score_rows(rep))
    report.write_json(summary, out / "summary.json")
    report.write_rows(out / "histogram.csv", ["bin_lower", "bin_upper", "count"],
                      report.histogram_rows(rep))
    report.write_rows(out / "frontier.csv", ["id", "observed_kwh", "frontier_kwh", "overuse_ratio"],
                      report.frontier_rows(rep))
    s = rep.summary
    table = (f"{'':<10}{'Mean':>10}{'SD':>10}{'Min.':>10}{'Max.':>10}\n"
             f"{fr.family.value:<10}{s.mean:>10.6f}{(s.sd or 0):>10.6f}{s.min:>10.6f}{s.max:>10.6f}\n"
             + rep.headline())
    _emit(args, summary, report.SCORE_HEADER, report.score_rows(rep), table)
    return EXIT_OK


def cmd_simulate(args) -> int:
    out = _out(args)
    if args.spec:
        with open(_require(args.spec, "spec"), encoding="utf-8") as fh:
            dgp = DgpSpec.from_dict(json.load(fh))
        if args.seed is not None:
            dgp = dgp.with_seed(args.seed)
        sim = generate(dgp)
        ds, truth = sim.dataset, sim.truth_dict()
    else:
        if args.seed is None:
            raise InputError("--seed is required")
        ds = fixture_table2(args.housing, args.n, args.seed)
        truth = {"generator": "survey-fixture", "housing": args.housing.upper(), "n": args.n, "seed": args.seed}
    write_csv(ds, out / "data.csv")
    report.write_json(truth, out / "truth.json")
    if not args.quiet:
        print(f"wrote {ds.n} records to {out / 'data.csv'}")
    return EXIT_OK


def cmd_summarize(args) -> int:
    ds = _dataset(args)
    out = _out(args)
    rows = summarize(ds)
    d = {"dataset": ds.name, "n": ds.n,
         "variables": [{"variable": r.variable, "mean": r.mean, "sd": r.sd,
                        "min": r.min, "max": r.max} for r in rows],
         "rejected": len(ds.rejections), "warnings": len(ds.warnings)}
    header = ["variable", "n", "mean", "sd", "min", "max"]
    csv_rows = [[r.variable, r.n, report._num(r.mean), "" if r.sd is None else report._num(r.sd),
                 report._num(r.min), report._num(r.max)] for r in rows]
    report.write_json(d, out / "summary.json")
    report.write_rows(out / "summary.csv", header, csv_rows)
    table = "\n".join(
        f"{r.variable:<22}{r.mean:>14.6f}{(r.sd if r.sd is not None else float('nan')):>14.6f}"
        f"{r.min:>14.6f}{r.max:>14.6f}" for r in rows)
    _emit(args, d, header, csv_rows, f"{'variable':<22}{'mean':>14}{'sd':>14}{'min':>14}{'max':>14}\n" + table)
    return EXIT_OK


COMMANDS = {"fit": cmd_fit, "ladder": cmd_ladder, "score": cmd_score,
            "simulate": cmd_simulate, "summarize": cmd_summarize}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="demandfrontier",
                                     description="Stochastic consumption-frontier estimation.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--input", help="household CSV")
        p.add_argument("--schema", help="JSON sidecar mapping CSV headers to canonical names")
        p.add_argument("--spec", help="model spec JSON (DGP spec JSON for simulate)")
        p.add_argument("--out", default=".", help="output directory (created if absent)")
        p.add_argument("--format", choices=("json", "csv", "table"), default="table",
                       help="what to print on stdout")
        p.add_argument("--bins", type=int, default=20, help="histogram bins on [0, 1]")
        p.add_argument("--te", default="bc", choices=("bc", "expjlms"), help="efficiency estimator")
        p.add_argument("--seed", type=int, help="random seed (simulate only)")
        p.add_argument("--quiet", action="store_true", help="print nothing on success")
        if name == "score":
            p.add_argument("--fit", help="fit.json from a previous `fit` (default: <out>/fit.json)")
        if name == "simulate":
            p.add_argument("--housing", default="SRH", choices=("SRH", "SLUM", "srh", "slum"),
                           help="survey fixture to draw when no --spec is given")
            p.add_argument("--n", type=int, default=412, help="households in the fixture draw")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.bins < 1:
        print("error: --bins must be >= 1", file=sys.stderr)
        return EXIT_INPUT
    try:
        return COMMANDS[args.command](args)
    except ConvergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONVERGENCE
    except (InvariantError, CertificationError, AssertionError) as exc:
        print(f"error: internal invariant violated: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    except (InputError, DataError, SpecError, FileNotFoundError, json.JSONDecodeError,
            KeyError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
