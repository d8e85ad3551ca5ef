"""Command-line frontend: ``popkit fit``, ``popkit simulate`` and ``popkit diagnose``.

Exit codes: 0 success, 2 malformed input, 3 sampler aborted on a degenerate
conditional.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
import warnings
from dataclasses import asdict
from pathlib import Path

import numpy as np
from scipy.special import logit

from . import __version__
from .diagnostics import MIN_DRAWS, predictive_band, summarize
from .gibbs import DegenerateConditionalError, run_chain
from .io import (
    fmt,
    parse_run_config,
    read_dataset_csv,
    read_draws_csv,
    read_key_values,
    write_band_csv,
    write_dataset_csv,
    write_draws_csv,
    write_manifest,
    write_summary_csv,
)
from .model import DataError
from .simulate import REFERENCE_NATURAL, REFERENCE_OMEGA2, REFERENCE_TIMES, TruthSpec, simulate_dataset

EXIT_OK, EXIT_INPUT, EXIT_DEGENERATE = 0, 2, 3
BAND_POINTS = 100


def _err(msg):
    print(f"popkit: {msg}", file=sys.stderr)


def band_grid(t_max, n=BAND_POINTS):
    return np.linspace(t_max / n, t_max, n)


def _safe_name(pid):
    return "".join(c if c.isalnum() or c in "-_." else "_" for c in pid)


def write_outputs(draws, doses, t_max, out_dir, manifest=None):
    """Summary, per-patient bands and (optionally) the manifest for a set of draws."""
    out_dir = Path(out_dir)
    write_summary_csv(summarize(draws), out_dir / "summary.csv")
    for i, pid in enumerate(draws.patient_ids):
        grid = band_grid(t_max[i])
        write_band_csv(grid, predictive_band(draws, grid, doses[i], patient=i),
                       out_dir / f"bands_patient_{_safe_name(pid)}.csv")
    if manifest is not None:
        write_manifest(out_dir / "run_manifest.json", manifest)


def cmd_fit(data_path, config_path, out_dir) -> int:
    try:
        data, dropped = read_dataset_csv(data_path)
        config, priors = parse_run_config(read_key_values(config_path) if config_path else {})
    except (DataError, OSError) as exc:
        _err(str(exc))
        return EXIT_INPUT
    for msg in dropped:
        _err(f"warning: {msg}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    try:
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            draws = run_chain(data, priors, config)
        for w in caught:
            _err(f"warning: {w.message}")
    except DegenerateConditionalError as exc:
        _err(f"aborted: {exc}")
        return EXIT_DEGENERATE
    except DataError as exc:
        _err(str(exc))
        return EXIT_INPUT
    if len(draws) < MIN_DRAWS:
        _err(f"only {len(draws)} draws retained; summaries need at least {MIN_DRAWS}")
        write_draws_csv(draws, out / "draws.csv")
        return EXIT_INPUT
    write_draws_csv(draws, out / "draws.csv")
    doses = [p.dose for p in data.patients]
    t_max = [float(p.times[-1]) for p in data.patients]
    manifest = {
        "version": __version__,
        "seed": config.seed,
        "config": draws.config_echo(),
        "priors": asdict(priors),
        "acceptance": draws.acceptance,
        "final_step_sizes": draws.step_sizes,
        "n_draws": len(draws),
        "patients": [{"id": p.patient_id, "dose_mg": p.dose, "t_max_hr": tm, "n_obs": p.n_obs}
                     for p, tm in zip(data.patients, t_max)],
        "band_grid_points": BAND_POINTS,
        "dropped_rows": dropped,
    }
    write_outputs(draws, doses, t_max, out, manifest)
    return EXIT_OK


def _floats(s, n=None):
    vals = tuple(float(v) for v in s.split(",") if v.strip())
    if n is not None and len(vals) != n:
        raise ValueError(f"expected {n} comma-separated values, got {len(vals)}")
    return vals


TRUTH_KEYS = {"n_patients", "seed", "cl", "v", "ka", "f", "omega2", "sigma2", "dose", "times"}


def parse_truth_config(values):
    """``(TruthSpec, n_patients, seed)`` from a key=value mapping.

    Natural-scale keys ``cl, v, ka, f``; ``omega2`` and ``times`` are
    comma-separated. Missing keys fall back to the reference scenario.
    """
    unknown = set(values) - TRUTH_KEYS
    if unknown:
        raise DataError(f"unknown truth config keys: {', '.join(sorted(unknown))}")
    try:
        nat = [float(values.get(k, d)) for k, d in zip(("cl", "v", "ka"), REFERENCE_NATURAL)]
        if any(not (x > 0) for x in nat):
            raise ValueError("cl, v and ka must be > 0")
        f = float(values.get("f", 0.8))
        if not 0 < f < 1:
            raise ValueError("f must lie strictly inside (0, 1)")
        omega2 = _floats(values["omega2"], 3) if "omega2" in values else REFERENCE_OMEGA2
        times = _floats(values["times"]) if "times" in values else REFERENCE_TIMES
        truth = TruthSpec(alpha=tuple(np.log(nat)), omega2=tuple(omega2),
                          zeta=float(logit(f)), sigma2=float(values.get("sigma2", 0.01)),
                          doses=(float(values.get("dose", 320.0)),), design_times=(times,))
        n = int(values.get("n_patients", 12))
        seed = int(values.get("seed", 0))
        if n < 2:
            raise ValueError("n_patients must be >= 2")
    except (TypeError, ValueError) as exc:
        raise DataError(f"invalid truth config: {exc}") from None
    return truth, n, seed


def write_truth_csv(truth, theta, ids, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["parameter", "patient_id", "value"])
        for l in range(3):
            w.writerow([f"alpha{l + 1}", "", fmt(truth.alpha[l])])
        for l in range(3):
            w.writerow([f"omega2_{l + 1}", "", fmt(truth.omega2[l])])
        w.writerow(["zeta", "", fmt(truth.zeta)])
        w.writerow(["sigma2", "", fmt(truth.sigma2)])
        for l in range(3):
            for i, pid in enumerate(ids):
                w.writerow([f"theta{l + 1}", pid, fmt(theta[i, l])])


def cmd_simulate(truth_config_path, out_dir) -> int:
    try:
        truth, n, seed = parse_truth_config(read_key_values(truth_config_path))
    except (DataError, OSError) as exc:
        _err(str(exc))
        return EXIT_INPUT
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    data, theta = simulate_dataset(truth, n, seed=seed)
    write_dataset_csv(data, out / "data.csv")
    write_truth_csv(truth, theta, data.patient_ids, out / "truth.csv")
    return EXIT_OK


def cmd_diagnose(draws_path, out_dir, data_path=None) -> int:
    """Recompute summaries (and bands, given the dataset) from a draws file.

    Without ``data_path`` the doses and time spans come from a
    ``run_manifest.json`` next to the draws, if there is one.
    """
    try:
        draws = read_draws_csv(draws_path)
        if len(draws) < MIN_DRAWS:
            raise DataError(f"{draws_path}: {len(draws)} draws, need at least {MIN_DRAWS}")
        doses = t_max = None
        if data_path is not None:
            data, _ = read_dataset_csv(data_path)
            if list(data.patient_ids) != list(draws.patient_ids):
                raise DataError("patient ids in the dataset do not match the draws file")
            doses = [p.dose for p in data.patients]
            t_max = [float(p.times[-1]) for p in data.patients]
        else:
            mpath = Path(draws_path).with_name("run_manifest.json")
            if mpath.exists():
                with open(mpath) as fh:
                    pats = json.load(fh).get("patients", [])
                if [p["id"] for p in pats] == list(draws.patient_ids):
                    doses = [p["dose_mg"] for p in pats]
                    t_max = [p["t_max_hr"] for p in pats]
    except (DataError, OSError, ValueError, KeyError) as exc:
        _err(str(exc))
        return EXIT_INPUT
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if doses is None:
        write_summary_csv(summarize(draws), out / "summary.csv")
    else:
        write_outputs(draws, doses, t_max, out)
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="popkit", description="Bayesian population PK fitting.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    f = sub.add_parser("fit", help="run the Gibbs sampler on a dataset")
    f.add_argument("data", help="CSV with header patient_id,dose_mg,time_hr,conc")
    f.add_argument("config", nargs="?", default=None, help="key=value run config (optional)")
    f.add_argument("-o", "--out", default="popkit_out", help="output directory")

    s = sub.add_parser("simulate", help="simulate a dataset from a truth config")
    s.add_argument("truth", help="key=value truth config")
    s.add_argument("-o", "--out", default="popkit_sim", help="output directory")

    d = sub.add_parser("diagnose", help="recompute summaries and bands from draws.csv")
    d.add_argument("draws", help="draws.csv written by fit")
    d.add_argument("-o", "--out", default=None, help="output directory (default: beside draws)")
    d.add_argument("--data", default=None, help="dataset CSV, for bands when no manifest exists")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "fit":
        return cmd_fit(args.data, args.config, args.out)
    if args.command == "simulate":
        return cmd_simulate(args.truth, args.out)
    out = args.out if args.out is not None else str(Path(args.draws).parent)
    return cmd_diagnose(args.draws, out, args.data)


if __name__ == "__main__":
    sys.exit(main())
