"""Data containers and the joint log-posterior kernel of the hierarchical model.

Stage 1: ``y_ij = f(t_ij; theta_1i, theta_2i, theta_3i, zeta) + eps_ij``, ``eps ~ N(0, sigma2)``.
Stage 2: ``theta_li ~ N(alpha_l, omega2_l)`` with flat ``alpha_l``, Jeffreys
``omega2_l`` and ``sigma2``, and ``zeta ~ N(0, rho2)``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .pk_math import log_mean_raw


class DataError(ValueError):
    """Malformed or unusable observations."""


@dataclass(frozen=True)
class PatientRecord:
    patient_id: str
    dose: float
    times: np.ndarray
    log_conc: np.ndarray

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float).ravel()
        y = np.asarray(self.log_conc, dtype=float).ravel()
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "log_conc", y)
        if not self.dose > 0:
            raise DataError(f"patient {self.patient_id}: dose must be > 0")
        if times.size == 0 or times.size != y.size:
            raise DataError(f"patient {self.patient_id}: need matching, non-empty times/log_conc")
        if np.any(~(times > 0)):
            raise DataError(f"patient {self.patient_id}: observation times must be > 0")
        if np.any(np.diff(times) <= 0):
            raise DataError(f"patient {self.patient_id}: times must be strictly increasing")
        if np.any(~np.isfinite(y)):
            raise DataError(f"patient {self.patient_id}: log concentrations must be finite")
        times.setflags(write=False)
        y.setflags(write=False)

    @property
    def n_obs(self):
        return self.times.size


@dataclass(frozen=True)
class Dataset:
    """Ordered patients plus padded ``(N, max M)`` views used by the sampler."""

    patients: tuple

    def __post_init__(self):
        patients = tuple(self.patients)
        object.__setattr__(self, "patients", patients)
        if not patients:
            raise DataError("dataset has no patients")
        ids = [p.patient_id for p in patients]
        if len(set(ids)) != len(ids):
            raise DataError("patient ids must be unique")

    def __len__(self):
        return len(self.patients)

    @property
    def n_patients(self):
        return len(self.patients)

    @property
    def patient_ids(self):
        return [p.patient_id for p in self.patients]

    @cached_property
    def doses(self):
        return np.array([p.dose for p in self.patients], dtype=float)

    @cached_property
    def n_obs(self):
        return np.array([p.n_obs for p in self.patients], dtype=int)

    @property
    def total_obs(self):
        return int(self.n_obs.sum())

    @cached_property
    def _padded(self):
        width = int(self.n_obs.max())
        n = self.n_patients
        times = np.ones((n, width))
        y = np.zeros((n, width))
        mask = np.zeros((n, width))
        for i, p in enumerate(self.patients):
            times[i, : p.n_obs] = p.times
            y[i, : p.n_obs] = p.log_conc
            mask[i, : p.n_obs] = 1.0
        return times, y, mask

    @property
    def times(self):
        return self._padded[0]

    @property
    def log_conc(self):
        return self._padded[1]

    @property
    def mask(self):
        return self._padded[2]

    def subset(self, indices):
        return Dataset(tuple(self.patients[i] for i in indices))

    def check_fittable(self):
        """Reject single-patient datasets; warn on very small ones."""
        if self.n_patients < 2:
            raise DataError("at least 2 patients are required to fit the population model")
        if self.n_patients < 4:
            warnings.warn(f"only {self.n_patients} patients; variance-component "
                          "posteriors will be very heavy-tailed", stacklevel=2)


@dataclass(frozen=True)
class Priors:
    zeta_prior_variance: float = 10.0

    def __post_init__(self):
        if not self.zeta_prior_variance > 0:
            raise ValueError("zeta_prior_variance must be > 0")


@dataclass(frozen=True)
class ChainState:
    theta: np.ndarray
    zeta: float
    sigma2: float
    alpha: np.ndarray = field(default_factory=lambda: np.zeros(3))
    omega2: np.ndarray = field(default_factory=lambda: np.ones(3))

    def __post_init__(self):
        theta = np.array(self.theta, dtype=float)
        alpha = np.array(self.alpha, dtype=float).reshape(3)
        omega2 = np.array(self.omega2, dtype=float).reshape(3)
        if theta.ndim != 2 or theta.shape[1] != 3:
            raise ValueError("theta must have shape (N, 3)")
        for arr in (theta, alpha, omega2):
            arr.setflags(write=False)
        object.__setattr__(self, "theta", theta)
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "omega2", omega2)
        object.__setattr__(self, "zeta", float(self.zeta))
        object.__setattr__(self, "sigma2", float(self.sigma2))

    def is_valid(self):
        finite = all(np.all(np.isfinite(v)) for v in
                     (self.theta, self.alpha, self.omega2, self.zeta, self.sigma2))
        return finite and self.sigma2 > 0 and bool(np.all(self.omega2 > 0))

    def replace(self, **changes):
        kwargs = dict(theta=self.theta, zeta=self.zeta, sigma2=self.sigma2,
                      alpha=self.alpha, omega2=self.omega2)
        kwargs.update(changes)
        return ChainState(**kwargs)

    def with_theta(self, l, i, value):
        """Copy with ``theta[i, l-1]`` set to ``value`` (``l`` is 1-based)."""
        theta = self.theta.copy()
        theta[i, l - 1] = value
        return self.replace(theta=theta)


def mean_matrix(theta, zeta, data: Dataset, rows=None):
    """``f(t_ij)`` for every (padded) observation; ``theta`` rows align with ``rows``."""
    times = data.times if rows is None else data.times[rows]
    doses = data.doses if rows is None else data.doses[rows]
    theta = np.asarray(theta, dtype=float)
    return log_mean_raw(theta[:, 0:1], theta[:, 1:2], theta[:, 2:3], zeta,
                        doses[:, None], times)


def residual_ss_all(theta, zeta, data: Dataset, rows=None):
    """Per-patient residual sums of squares, shape ``(len(rows),)``."""
    y = data.log_conc if rows is None else data.log_conc[rows]
    mask = data.mask if rows is None else data.mask[rows]
    r = (y - mean_matrix(theta, zeta, data, rows)) * mask
    return np.sum(r * r, axis=1)


def residual_ss(state: ChainState, data: Dataset, patient_index: int) -> float:
    """``sum_j (y_ij - f_i(t_ij))**2`` for one patient."""
    if not 0 <= patient_index < data.n_patients:
        raise IndexError(f"patient_index {patient_index} out of range")
    p = data.patients[patient_index]
    th = state.theta[patient_index]
    f = log_mean_raw(th[0], th[1], th[2], state.zeta, p.dose, p.times)
    r = p.log_conc - f
    return float(np.dot(r, r))


def log_joint(state: ChainState, data: Dataset, priors: Priors) -> float:
    """Unnormalised log joint posterior; ``-inf`` if a variance is non-positive."""
    if not state.sigma2 > 0 or not np.all(state.omega2 > 0):
        return -np.inf
    n = data.n_patients
    ss = float(residual_ss_all(state.theta, state.zeta, data).sum())
    out = -0.5 * data.total_obs * np.log(state.sigma2) - ss / (2.0 * state.sigma2)
    dev = state.theta - state.alpha[None, :]
    dev_ss = np.sum(dev * dev, axis=0)
    out += float(np.sum(-0.5 * n * np.log(state.omega2) - dev_ss / (2.0 * state.omega2)))
    # Jeffreys priors on sigma2 and each omega2; alpha is flat
    out -= np.log(state.sigma2) + float(np.sum(np.log(state.omega2)))
    out -= state.zeta**2 / (2.0 * priors.zeta_prior_variance)
    return float(out)
