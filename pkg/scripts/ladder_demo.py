"""Fit the OLS / NHN / NHN_HET / TN ladder to survey-shaped fixture households.

    python scripts/ladder_demo.py --housing SRH --n 412 --seed 91
"""

import argparse

from demandfrontier.diagnostics import ladder_specs, run_ladder
from demandfrontier.report import ladder_table
from demandfrontier.simulate import fixture_table2

FRONTIER = ("income_quartile", "hh_size", "wfpr", "own_ac")


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--housing", default="SRH", choices=["SRH", "SLUM"])
    ap.add_argument("--n", type=int, default=412)
    ap.add_argument("--seed", type=int, default=91)
    args = ap.parse_args()
    ds = fixture_table2(args.housing, args.n, args.seed)
    rep = run_ladder(ds, ladder_specs(FRONTIER, ("avg_hh_age",)))
    print(ladder_table(rep))
    for row in rep.rows:
        if not row.ok:
            print(f"{row.family.value}: {row.error}")
    print(f"recommended: {rep.recommended.value}")


if __name__ == "__main__":
    main()
