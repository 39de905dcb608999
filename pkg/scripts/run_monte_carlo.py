"""Monte Carlo calibration of the frontier estimators on simulated households.

    python scripts/run_monte_carlo.py --family NHN --n 2000 --reps 200 --seed 20240106
"""

import argparse

from demandfrontier.model import Family
from demandfrontier.simulate import DgpSpec, monte_carlo

BETA = (8.0, 0.25, -0.10)
FRONTIER = ("own_ac", "wfpr")


def dgp_for(family: Family, n: int, seed: int, sigma_u: float) -> DgpSpec:
    if family is Family.NHN_HET:
        return DgpSpec(family, BETA, 0.3, n, seed, FRONTIER,
                       delta=(-1.5, 0.4), ineff_vars=("hh_size",))
    if family is Family.TN:
        return DgpSpec(family, BETA, 0.3, n, seed, FRONTIER, sigma_u=sigma_u,
                       delta=(0.1, 0.05), ineff_vars=("hh_size",))
    return DgpSpec(family, BETA, 0.3, n, seed, FRONTIER, sigma_u=sigma_u)


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--family", default="NHN", choices=[f.value for f in Family if f.is_frontier])
    ap.add_argument("--n", type=int, default=2000)
    ap.add_argument("--reps", type=int, default=200)
    ap.add_argument("--seed", type=int, default=20240106)
    ap.add_argument("--sigma-u", type=float, default=0.5)
    args = ap.parse_args()
    table = monte_carlo(dgp_for(Family(args.family), args.n, args.seed, args.sigma_u), args.reps)
    print(table.to_text())


if __name__ == "__main__":
    main()
