"""Closed-form one-compartment PK functions with first-order absorption.

All functions broadcast over numpy arrays. The central-compartment amount is
evaluated through a cancellation-free form::

    (exp(-ke t) - exp(-ka t)) / (ka - ke) = t * exp(-min(ka, ke) t) / B(|ka - ke| t)

with ``B(x) = x / (1 - exp(-x))``, which is also what the analytic gradients
are derived from.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit, log_expit, logit

#: Rate gaps with ``|ka - ke| <= SINGULAR_RTOL * max(ka, ke)`` use the limit ``D ka t e^{-ka t}``.
SINGULAR_RTOL = 1e-8

# below this |s| the series for (B(s) - 1)/s is accurate to machine precision
_SERIES_CUTOFF = 1e-3


class PKDomainError(ValueError):
    """Raised when a PK function is called outside its domain."""


@dataclass(frozen=True)
class NaturalParams:
    """Clearance (L/hr), volume (L), absorption rate (1/hr) and bioavailability."""

    clearance: float
    volume: float
    absorption_rate: float
    bioavailability: float = 1.0

    def __post_init__(self):
        cl, v, ka, f = (np.asarray(x, dtype=float) for x in
                        (self.clearance, self.volume, self.absorption_rate, self.bioavailability))
        if np.any(~(cl > 0)) or np.any(~(v > 0)) or np.any(~(ka > 0)):
            raise PKDomainError("clearance, volume and absorption_rate must be > 0")
        if np.any(~((f >= 0) & (f <= 1))):
            raise PKDomainError("bioavailability must lie in [0, 1]")
        ke = cl / v
        if np.any(~np.isfinite(ke)) or np.any(~(ke > 0)):
            raise PKDomainError("elimination rate CL/V must be finite and > 0")

    @property
    def elimination_rate(self):
        return self.clearance / self.volume

    def to_model(self) -> ModelParams:
        return ModelParams(
            np.log(self.clearance),
            np.log(self.volume),
            np.log(self.absorption_rate),
            logit(self.bioavailability),
        )


@dataclass(frozen=True)
class ModelParams:
    """Unconstrained parameters: log CL, log V, log ka and logit F."""

    theta1: float
    theta2: float
    theta3: float
    zeta: float = np.inf

    def __post_init__(self):
        for name in ("theta1", "theta2", "theta3"):
            if np.any(~np.isfinite(getattr(self, name))):
                raise PKDomainError(f"{name} must be finite")
        if np.any(np.isnan(self.zeta)):
            raise PKDomainError("zeta must not be NaN")

    def to_natural(self) -> NaturalParams:
        return NaturalParams(
            np.exp(self.theta1),
            np.exp(self.theta2),
            np.exp(self.theta3),
            expit(self.zeta),
        )


def _check_time(t, strict=False):
    t = np.asarray(t, dtype=float)
    bad = ~(t > 0) if strict else ~(t >= 0)
    if np.any(bad):
        raise PKDomainError("time must be > 0" if strict else "time must be >= 0")
    return t


def _check_rates(*rates):
    for k in rates:
        k = np.asarray(k, dtype=float)
        if np.any(~(k > 0)) or np.any(~np.isfinite(k)):
            raise PKDomainError("rate constants must be finite and > 0")


def _b_of(x):
    """B(x) = x / (1 - exp(-x)), with B(0) = 1."""
    x = np.asarray(x, dtype=float)
    den = -np.expm1(-x)
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.where(x == 0.0, 1.0, x / np.where(x == 0.0, 1.0, den))
    return out


def _p_of(s):
    """P(s) = (B(s) - 1) / s, with P(0) = 1/2."""
    s = np.asarray(s, dtype=float)
    small = np.abs(s) < _SERIES_CUTOFF
    s_safe = np.where(small, 1.0, s)
    direct = (_b_of(s_safe) - 1.0) / s_safe
    series = 0.5 + s / 12.0 - s**3 / 720.0
    return np.where(small, series, direct)


def _log_kernel(ka, ke, t):
    """log of (e^{-ke t} - e^{-ka t}) / (ka - ke), stable for either sign and the limit."""
    gap = np.abs(ka - ke)
    lo = np.minimum(ka, ke)
    singular = gap <= SINGULAR_RTOL * np.maximum(ka, ke)
    if not np.any(singular):
        # log t - log B(gap t) simplifies to log(1 - e^{-gap t}) - log(gap)
        return np.log(-np.expm1(-gap * t)) - np.log(gap) - lo * t
    x = np.where(singular, 0.0, gap * t)
    return np.log(t) - lo * t - np.log(_b_of(x))


def _kernel(ka, ke, t):
    """(e^{-ke t} - e^{-ka t}) / (ka - ke); zero at t = 0."""
    gap = np.abs(ka - ke)
    lo = np.minimum(ka, ke)
    singular = gap <= SINGULAR_RTOL * np.maximum(ka, ke)
    x = np.where(singular, 0.0, gap * t)
    return t * np.exp(-lo * t) / _b_of(x)


def amount_absorption_site(dose, ka, t):
    """Drug amount remaining at the absorption site, ``D exp(-ka t)``."""
    _check_rates(ka)
    t = _check_time(t)
    return np.asarray(dose, dtype=float) * np.exp(-np.asarray(ka, dtype=float) * t)


def amount_central(dose, ka, ke, t):
    """Drug amount in the central compartment after an oral dose at t = 0.

    Equals ``D ka / (ka - ke) * (exp(-ke t) - exp(-ka t))`` for either ordering
    of the rates, and ``D ka t exp(-ka t)`` when they (nearly) coincide.
    """
    _check_rates(ka, ke)
    t = _check_time(t)
    ka = np.asarray(ka, dtype=float)
    ke = np.asarray(ke, dtype=float)
    return np.asarray(dose, dtype=float) * ka * _kernel(ka, ke, t)


def concentration(params: NaturalParams, dose, t):
    """Plasma concentration ``F * A(t) / V`` with ``ke = CL / V``."""
    t = _check_time(t)
    ka = np.asarray(params.absorption_rate, dtype=float)
    ke = np.asarray(params.elimination_rate, dtype=float)
    v = np.asarray(params.volume, dtype=float)
    f = np.asarray(params.bioavailability, dtype=float)
    return f * np.asarray(dose, dtype=float) * ka * _kernel(ka, ke, t) / v


def log_mean_raw(theta1, theta2, theta3, zeta, dose, t):
    """Unchecked log-concentration; callers guarantee dose > 0 and t > 0."""
    ke = np.exp(theta1 - theta2)
    ka = np.exp(theta3)
    return np.log(dose) + theta3 - theta2 + log_expit(zeta) + _log_kernel(ka, ke, t)


def grad_log_mean_raw(theta1, theta2, theta3, zeta, dose, t):
    """Unchecked gradient of :func:`log_mean_raw`; returns a 4-tuple of arrays."""
    ke = np.exp(theta1 - theta2)
    ka = np.exp(theta3)
    s = (ka - ke) * t
    singular = np.abs(ka - ke) <= SINGULAR_RTOL * np.maximum(ka, ke)
    s = np.where(singular, 0.0, s)
    # d log kernel / d ke = -t P(s),  d log kernel / d ka = -t P(-s)
    dke = ke * t * _p_of(s)
    d1 = -dke
    d2 = dke - 1.0
    d3 = 1.0 - ka * t * _p_of(-s)
    dz = expit(-np.asarray(zeta, dtype=float))
    shape = np.broadcast(d1, d3, dz).shape
    return tuple(np.broadcast_to(d, shape) for d in (d1, d2, d3, dz))


def _check_log_args(dose, t):
    if np.any(~(np.asarray(dose, dtype=float) > 0)):
        raise PKDomainError("dose must be > 0")
    return _check_time(t, strict=True)


def log_mean(params: ModelParams, dose, t):
    """Log-concentration on the model scale.

    Parameters
    ----------
    params : ModelParams
        ``(log CL, log V, log ka, logit F)``; fields may be arrays.
    dose : float or array
        Administered dose, > 0.
    t : float or array
        Observation time(s), strictly positive.

    Returns
    -------
    ndarray
        ``log C(t)``; finite for every finite parameter vector.
    """
    t = _check_log_args(dose, t)
    return log_mean_raw(params.theta1, params.theta2, params.theta3, params.zeta, dose, t)


def grad_log_mean(params: ModelParams, dose, t):
    """Partial derivatives of :func:`log_mean` w.r.t. ``(theta1, theta2, theta3, zeta)``.

    Returned as an array with a leading axis of length 4.
    """
    t = _check_log_args(dose, t)
    return np.stack(grad_log_mean_raw(params.theta1, params.theta2, params.theta3,
                                      params.zeta, dose, t))


def half_life(clearance, volume):
    """Approximate elimination half-life ``0.693 V / CL``."""
    cl = np.asarray(clearance, dtype=float)
    v = np.asarray(volume, dtype=float)
    if np.any(~(cl > 0)) or np.any(~(v > 0)):
        raise PKDomainError("clearance and volume must be > 0")
    return 0.693 * v / cl


def peak_time(ka, ke):
    """Time of maximum concentration, ``ln(ka/ke) / (ka - ke)`` (``1/ka`` in the limit)."""
    _check_rates(ka, ke)
    ka = np.asarray(ka, dtype=float)
    ke = np.asarray(ke, dtype=float)
    singular = np.abs(ka - ke) <= SINGULAR_RTOL * np.maximum(ka, ke)
    with np.errstate(invalid="ignore", divide="ignore"):
        tmax = np.log(ka / ke) / (ka - ke)
    return np.where(singular, 1.0 / ka, tmax)
