"""Synthetic datasets drawn from the hierarchical model itself."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import logit

from .model import Dataset, PatientRecord
from .pk_math import log_mean_raw

REFERENCE_TIMES = (0.25, 0.5, 1.0, 2.0, 3.5, 5.0, 7.0, 9.0, 12.0, 24.0)
#: Reference population values (CL L/hr, V L, ka 1/hr).
REFERENCE_NATURAL = (2.79, 31.61, 1.38)
REFERENCE_OMEGA2 = (0.07, 0.02, 0.25)


@dataclass(frozen=True)
class TruthSpec:
    """Generating values on the model scale.

    ``doses`` and ``design_times`` hold either one entry per patient or a
    single entry that is shared by every patient.
    """

    alpha: tuple
    omega2: tuple
    zeta: float
    sigma2: float
    doses: tuple = (320.0,)
    design_times: tuple = (REFERENCE_TIMES,)

    def __post_init__(self):
        alpha = np.asarray(self.alpha, dtype=float)
        omega2 = np.asarray(self.omega2, dtype=float)
        if alpha.shape != (3,) or omega2.shape != (3,):
            raise ValueError("alpha and omega2 need 3 entries")
        if np.any(omega2 < 0) or self.sigma2 < 0:
            raise ValueError("variances must be >= 0")
        if not np.isfinite(self.zeta):
            raise ValueError("zeta must be finite")
        if any(d <= 0 for d in self.doses):
            raise ValueError("doses must be > 0")
        for t in self.design_times:
            t = np.asarray(t, dtype=float)
            if t.size == 0 or np.any(t <= 0) or np.any(np.diff(t) <= 0):
                raise ValueError("design times must be positive and strictly increasing")

    @classmethod
    def reference(cls, sigma2=0.01, omega2=REFERENCE_OMEGA2, bioavailability=0.8):
        """12-subject, 10-sample oral design at the reference population values."""
        return cls(alpha=tuple(np.log(REFERENCE_NATURAL)), omega2=tuple(omega2),
                   zeta=float(logit(bioavailability)), sigma2=sigma2)

    def dose_for(self, i):
        return self.doses[i] if len(self.doses) > 1 else self.doses[0]

    def times_for(self, i):
        t = self.design_times[i] if len(self.design_times) > 1 else self.design_times[0]
        return np.asarray(t, dtype=float)


def simulate_dataset(truth: TruthSpec, n_patients: int, seed=0, ids=None):
    """Draw ``theta_li ~ N(alpha_l, omega2_l)`` then log-scale observations.

    Returns ``(dataset, theta)`` where ``theta`` is the ``(N, 3)`` latent truth.
    """
    if n_patients < 2:
        raise ValueError("n_patients must be >= 2")
    for attr in ("doses", "design_times"):
        k = len(getattr(truth, attr))
        if k not in (1, n_patients):
            raise ValueError(f"{attr} has {k} entries for {n_patients} patients")
    rng = np.random.default_rng(seed)
    alpha = np.asarray(truth.alpha, dtype=float)
    sd = np.sqrt(np.asarray(truth.omega2, dtype=float))
    theta = alpha + sd * rng.standard_normal((n_patients, 3))
    ids = [str(k + 1) for k in range(n_patients)] if ids is None else list(ids)
    patients = []
    for i in range(n_patients):
        t = truth.times_for(i)
        f = log_mean_raw(theta[i, 0], theta[i, 1], theta[i, 2], truth.zeta, truth.dose_for(i), t)
        y = f + np.sqrt(truth.sigma2) * rng.standard_normal(t.size)
        patients.append(PatientRecord(ids[i], float(truth.dose_for(i)), t, y))
    return Dataset(tuple(patients)), theta
