"""CSV and key=value file formats used by the command-line tool.

All floats are written with ``repr``, the shortest string that round-trips.
"""

from __future__ import annotations

import csv
import json
from collections import OrderedDict

import numpy as np

from .gibbs import PosteriorDraws, SamplerConfig
from .kernels import KernelConfig
from .model import DataError, Dataset, PatientRecord, Priors

DATA_HEADER = ["patient_id", "dose_mg", "time_hr", "conc"]
SUMMARY_HEADER = ["name", "mean", "sd", "q025", "q50", "q975", "ess",
                  "natural_mean", "natural_q025", "natural_q975"]
BAND_HEADER = ["time_hr", "q025", "q50", "q975"]


def fmt(x):
    if x is None:
        return ""
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


# ---------------------------------------------------------------------------
# dataset


def read_dataset_csv(path):
    """Parse a ``patient_id,dose_mg,time_hr,conc`` file.

    Returns ``(dataset, messages)``. Rows with ``time <= 0`` or ``conc <= 0``
    are dropped and reported in ``messages``; anything else that is wrong
    raises :class:`DataError` naming the line.
    """
    messages = []
    rows = OrderedDict()
    doses = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != DATA_HEADER:
            raise DataError(f"{path}: header must be {','.join(DATA_HEADER)}")
        for lineno, rec in enumerate(reader, start=2):
            if not rec or all(not c.strip() for c in rec):
                continue
            if len(rec) != 4:
                raise DataError(f"{path}:{lineno}: expected 4 fields, got {len(rec)}")
            pid = rec[0].strip()
            try:
                dose, t, conc = (float(c) for c in rec[1:])
            except ValueError:
                raise DataError(f"{path}:{lineno}: non-numeric value in {rec[1:]}") from None
            if not pid:
                raise DataError(f"{path}:{lineno}: empty patient_id")
            if not (np.isfinite(dose) and dose > 0):
                raise DataError(f"{path}:{lineno}: dose must be a positive number")
            if pid in doses and doses[pid] != dose:
                raise DataError(f"{path}:{lineno}: dose for patient {pid} changes between rows")
            doses[pid] = dose
            rows.setdefault(pid, [])
            if not (t > 0 and conc > 0) or not (np.isfinite(t) and np.isfinite(conc)):
                messages.append(f"{path}:{lineno}: dropped row for patient {pid} "
                                f"(time={rec[2].strip()}, conc={rec[3].strip()})")
                continue
            rows[pid].append((t, conc, lineno))
    if not rows:
        raise DataError(f"{path}: no data rows")
    patients = []
    for pid, obs in rows.items():
        if not obs:
            raise DataError(f"{path}: patient {pid} has no usable observations")
        obs.sort(key=lambda r: r[0])
        times = np.array([o[0] for o in obs])
        dup = np.flatnonzero(np.diff(times) == 0)
        if dup.size:
            raise DataError(f"{path}:{obs[dup[0] + 1][2]}: duplicate time for patient {pid}")
        patients.append(PatientRecord(pid, doses[pid], times, np.log([o[1] for o in obs])))
    return Dataset(tuple(patients)), messages


def write_dataset_csv(dataset: Dataset, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(DATA_HEADER)
        for p in dataset.patients:
            for t, y in zip(p.times, p.log_conc):
                w.writerow([p.patient_id, fmt(p.dose), fmt(t), fmt(np.exp(y))])


# ---------------------------------------------------------------------------
# key=value configs


def read_key_values(path):
    out = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise DataError(f"{path}:{lineno}: expected key=value")
            key, value = (s.strip() for s in line.split("=", 1))
            if not key:
                raise DataError(f"{path}:{lineno}: empty key")
            out[key] = value
    return out


def _bool(s):
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


RUN_KEYS = {"iterations", "burn_in", "thin", "seed", "theta_kernel", "theta_step",
            "zeta_kernel", "zeta_step", "rho2", "parallel", "adapt", "ridge", "ridge_step"}


def parse_run_config(values):
    """Build ``(SamplerConfig, Priors)`` from a key=value mapping."""
    unknown = set(values) - RUN_KEYS
    if unknown:
        raise DataError(f"unknown run config keys: {', '.join(sorted(unknown))}")
    try:
        adapt = _bool(values.get("adapt", "true"))
        theta_kernel = KernelConfig(
            kind=values.get("theta_kernel", "metropolis"),
            step=float(values.get("theta_step", 0.1)),
            adapt_during_burnin=adapt,
        )
        config = SamplerConfig(
            n_iterations=int(values.get("iterations", 20_000)),
            burn_in=int(values.get("burn_in", 10_000)),
            thin=int(values.get("thin", 1)),
            seed=int(values.get("seed", 0)),
            theta_kernel=theta_kernel,
            zeta_kernel=values.get("zeta_kernel", "ess"),
            zeta_step=float(values.get("zeta_step", 0.05)),
            ridge_move=_bool(values.get("ridge", "true")),
            ridge_step=float(values.get("ridge_step", 1.0)),
            parallel_patients=_bool(values.get("parallel", "false")),
        )
        priors = Priors(zeta_prior_variance=float(values.get("rho2", 10.0)))
    except (TypeError, ValueError) as exc:
        raise DataError(f"invalid run config: {exc}") from None
    return config, priors


# ---------------------------------------------------------------------------
# draws


def draws_header(patient_ids):
    cols = ["iteration"]
    for l in range(1, 4):
        cols += [f"theta{l}[{pid}]" for pid in patient_ids]
    cols += ["zeta", "sigma2", "alpha1", "alpha2", "alpha3", "omega2_1", "omega2_2", "omega2_3"]
    return cols


def write_draws_csv(draws: PosteriorDraws, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(draws_header(draws.patient_ids))
        for k in range(len(draws)):
            row = [fmt(draws.iterations[k])]
            row += [fmt(v) for v in draws.theta[k].T.ravel()]
            row += [fmt(draws.zeta[k]), fmt(draws.sigma2[k])]
            row += [fmt(v) for v in draws.alpha[k]] + [fmt(v) for v in draws.omega2[k]]
            w.writerow(row)


def read_draws_csv(path) -> PosteriorDraws:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[0] != "iteration":
            raise DataError(f"{path}: not a draws file")
        n_theta = len(header) - 9
        if n_theta <= 0 or n_theta % 3:
            raise DataError(f"{path}: unexpected number of columns ({len(header)})")
        n = n_theta // 3
        ids = []
        for c in header[1:1 + n]:
            if not (c.startswith("theta1[") and c.endswith("]")):
                raise DataError(f"{path}: bad column {c!r}")
            ids.append(c[len("theta1["):-1])
        if header != draws_header(ids):
            raise DataError(f"{path}: header does not match the draws schema")
        try:
            data = np.array([[float(v) for v in row] for row in reader if row], dtype=float)
        except ValueError as exc:
            raise DataError(f"{path}: {exc}") from None
    if data.size == 0:
        data = np.zeros((0, len(header)))
    if data.shape[1] != len(header):
        raise DataError(f"{path}: ragged rows")
    s = data.shape[0]
    theta = data[:, 1:1 + n_theta].reshape(s, 3, n).transpose(0, 2, 1)
    rest = data[:, 1 + n_theta:]
    return PosteriorDraws(
        iterations=data[:, 0].astype(np.int64), theta=np.ascontiguousarray(theta),
        zeta=rest[:, 0].copy(), sigma2=rest[:, 1].copy(), alpha=rest[:, 2:5].copy(),
        omega2=rest[:, 5:8].copy(), patient_ids=ids,
    )


# ---------------------------------------------------------------------------
# summaries, bands, manifest


def write_summary_csv(summaries, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SUMMARY_HEADER)
        for s in summaries:
            w.writerow([s.name, fmt(s.mean), fmt(s.sd), fmt(s.q025), fmt(s.q50), fmt(s.q975),
                        fmt(s.effective_sample_size), fmt(s.natural_mean),
                        fmt(s.natural_q025), fmt(s.natural_q975)])


def write_band_csv(times, band, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(BAND_HEADER)
        for t, q in zip(times, band):
            w.writerow([fmt(t)] + [fmt(v) for v in q])


def write_manifest(path, manifest):
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    raise TypeError(f"cannot serialise {type(o).__name__}")
