"""Coverage of 95% credible intervals over seeded replicates of the reference design.

    python scripts/calibration_study.py --replicates 20
    python scripts/calibration_study.py --replicates 20 --no-ridge

Prints one line per replicate and a coverage table for CL_pop, V_pop, ka_pop
and F.
"""

import argparse
import time

import numpy as np

from popkit.diagnostics import summarize
from popkit.gibbs import SamplerConfig, run_chain
from popkit.model import Priors
from popkit.simulate import REFERENCE_NATURAL, REFERENCE_OMEGA2, TruthSpec, simulate_dataset

NAMES = ("CL_pop", "V_pop", "ka_pop", "F")


def replicate(r, args):
    truth = TruthSpec.reference(sigma2=args.sigma2, omega2=REFERENCE_OMEGA2,
                                bioavailability=args.bioavailability)
    data, _ = simulate_dataset(truth, args.patients, seed=1000 + r)
    cfg = SamplerConfig(n_iterations=args.iterations, burn_in=args.iterations // 2, seed=r,
                        ridge_move=not args.no_ridge)
    rows = {s.name: s for s in summarize(run_chain(data, Priors(), cfg))}
    truths = dict(zip(NAMES, (*REFERENCE_NATURAL, args.bioavailability)))
    return {n: (rows[n].q025, rows[n].q50, rows[n].q975, truths[n]) for n in NAMES}


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--replicates", type=int, default=20)
    p.add_argument("--iterations", type=int, default=20_000)
    p.add_argument("--patients", type=int, default=12)
    p.add_argument("--sigma2", type=float, default=0.01)
    p.add_argument("--bioavailability", type=float, default=0.8)
    p.add_argument("--no-ridge", action="store_true", help="disable the zeta ridge translation")
    args = p.parse_args()

    hits = {n: 0 for n in NAMES}
    start = time.perf_counter()
    for r in range(args.replicates):
        res = replicate(r, args)
        parts = []
        for n, (lo, med, hi, true) in res.items():
            inside = lo <= true <= hi
            hits[n] += inside
            parts.append(f"{n} [{lo:.3g}, {hi:.3g}]{'' if inside else ' MISS'}")
        print(f"replicate {r:2d}: " + "; ".join(parts), flush=True)
    elapsed = time.perf_counter() - start
    print(f"\nridge move {'off' if args.no_ridge else 'on'}, {args.replicates} replicates, "
          f"{elapsed:.0f}s")
    for n in NAMES:
        print(f"  {n:7s} coverage {hits[n]}/{args.replicates}")


if __name__ == "__main__":
    main()
