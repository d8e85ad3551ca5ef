"""Brute-force reference computations used to check the fast paths.

Nothing here calls into :mod:`popkit.pk_math`; the ODE right-hand side and
the quadrature are written out from scratch.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class SupportTruncationError(ValueError):
    """The target still carries non-negligible mass at the grid boundary."""


def _rhs(ka, ke, aa, a):
    return -ka * aa, ka * aa - ke * a, ke * a


def integrate_ode(dose, ka, ke, t_end, n_steps=10_000, return_eliminated=False):
    """Classical RK4 for the absorption-site / central-compartment system.

    Starts from ``(A_a, A) = (dose, 0)`` and takes ``n_steps`` equal steps to
    ``t_end``. All arguments broadcast, so a batch of problems with different
    end times is integrated in one pass. The cumulative eliminated amount
    ``ke * int_0^t A`` is carried as a third state when ``return_eliminated``.
    """
    if n_steps < 100:
        raise ValueError("n_steps must be >= 100")
    dose, ka, ke, t_end = np.broadcast_arrays(*(np.asarray(v, dtype=float)
                                                for v in (dose, ka, ke, t_end)))
    if np.any(t_end < 0):
        raise ValueError("t_end must be >= 0")
    h = t_end / n_steps
    aa, a, el = dose.copy(), np.zeros_like(dose), np.zeros_like(dose)
    for _ in range(n_steps):
        p1, q1, r1 = _rhs(ka, ke, aa, a)
        p2, q2, r2 = _rhs(ka, ke, aa + 0.5 * h * p1, a + 0.5 * h * q1)
        p3, q3, r3 = _rhs(ka, ke, aa + 0.5 * h * p2, a + 0.5 * h * q2)
        p4, q4, r4 = _rhs(ka, ke, aa + h * p3, a + h * q3)
        aa = aa + (h / 6.0) * (p1 + 2.0 * p2 + 2.0 * p3 + p4)
        a = a + (h / 6.0) * (q1 + 2.0 * q2 + 2.0 * q3 + q4)
        el = el + (h / 6.0) * (r1 + 2.0 * r2 + 2.0 * r3 + r4)
    if return_eliminated:
        return aa, a, el
    return aa, a


@dataclass(frozen=True)
class GridPosterior:
    x: np.ndarray
    density: np.ndarray
    cdf_values: np.ndarray

    @property
    def mean(self):
        return np.trapezoid(self.x * self.density, self.x)

    @property
    def variance(self):
        m = self.mean
        return np.trapezoid((self.x - m) ** 2 * self.density, self.x)

    def cdf(self, q):
        return np.interp(q, self.x, self.cdf_values, left=0.0, right=1.0)


def _tabulate(log_density, lo, hi, n_points):
    x = np.linspace(lo, hi, n_points)
    lp = np.asarray(log_density(x), dtype=float)
    lp = np.where(np.isfinite(lp), lp, -np.inf)
    return x, lp


def grid_posterior(target, lo, hi, n_points=4001, expand=False, max_doublings=30):
    """Tabulate a 1-D unnormalised density and normalise it by the trapezoid rule.

    ``target`` is a :class:`popkit.kernels.ScalarTarget` or any callable
    returning log-density values for an array of points. The log density at
    both endpoints must sit at least 30 nats below the grid maximum; with
    ``expand=True`` the interval is doubled about its centre (the target's
    prior mean when it has one) until that holds.
    """
    if not hi > lo:
        raise ValueError("need hi > lo")
    if n_points < 1000:
        raise ValueError("n_points must be >= 1000")
    log_density = getattr(target, "log_density", target)
    center = getattr(target, "prior_mean", None)
    if center is None:
        center = 0.5 * (lo + hi)
    for _ in range(max_doublings + 1):
        x, lp = _tabulate(log_density, lo, hi, n_points)
        top = lp.max()
        if not np.isfinite(top):
            raise SupportTruncationError("log density is -inf on the whole grid")
        if lp[0] < top - 30 and lp[-1] < top - 30:
            break
        if not expand:
            raise SupportTruncationError(
                f"tails at [{lo}, {hi}] are within 30 nats of the maximum")
        half = max(hi - center, center - lo)
        lo, hi = center - 2 * half, center + 2 * half
    else:
        raise SupportTruncationError("grid expansion did not capture the support")
    w = np.exp(lp - top)
    seg = 0.5 * (w[1:] + w[:-1]) * np.diff(x)
    cdf = np.concatenate([[0.0], np.cumsum(seg)])
    z = cdf[-1]
    return GridPosterior(x=x, density=w / z, cdf_values=cdf / z)
