"""Simulate the reference 12-subject design, fit it, and print the posterior summary.

    python scripts/reference_fit.py --seed 1 --out runs/reference
"""

import argparse
from pathlib import Path

from popkit.cli import cmd_fit, cmd_simulate

TRUTH = """n_patients = 12
seed = {seed}
cl = 2.79
v = 31.61
ka = 1.38
f = 0.8
omega2 = 0.07, 0.02, 0.25
sigma2 = 0.01
"""

RUN = """iterations = {iterations}
burn_in = {burn_in}
seed = {seed}
theta_kernel = {kernel}
"""


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--iterations", type=int, default=20_000)
    p.add_argument("--kernel", choices=("metropolis", "mala"), default="metropolis")
    p.add_argument("--out", default="runs/reference")
    args = p.parse_args()

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "truth.cfg").write_text(TRUTH.format(seed=args.seed))
    (out / "run.cfg").write_text(RUN.format(iterations=args.iterations, burn_in=args.iterations // 2,
                                            seed=args.seed, kernel=args.kernel))
    if cmd_simulate(out / "truth.cfg", out / "sim"):
        raise SystemExit("simulation failed")
    code = cmd_fit(out / "sim" / "data.csv", out / "run.cfg", out / "fit")
    if code:
        raise SystemExit(code)
    print((out / "fit" / "summary.csv").read_text())


if __name__ == "__main__":
    main()
