"""Single-coordinate MCMC transition kernels.

Every kernel accepts either a scalar or a 1-D array of *independent*
coordinates; the target then maps an array of points to an array of
log-densities elementwise. The Gibbs sampler uses this to update all
patients of one parameter block in a single call.

``rng`` is anything with numpy-Generator-style ``standard_normal(size)`` and
``random(size)``; each kernel draws in a fixed order so that outputs are a
deterministic function of (target, current, config, rng state).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

KINDS = ("metropolis", "mala", "ess")
DEFAULT_TARGET_ACCEPTANCE = {"metropolis": 0.44, "mala": 0.57, "ess": 1.0}

# log-step clipping keeps adaptation from running off to 0 or inf
_LOG_STEP_BOUNDS = (math.log(1e-8), math.log(1e3))


@dataclass(frozen=True)
class KernelConfig:
    kind: str = "metropolis"
    step: float = 0.1
    adapt_during_burnin: bool = True
    target_acceptance: Optional[float] = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown kernel kind {self.kind!r}; expected one of {KINDS}")
        if not self.step > 0:
            raise ValueError("step must be > 0")
        if self.target_acceptance is None:
            object.__setattr__(self, "target_acceptance", DEFAULT_TARGET_ACCEPTANCE[self.kind])
        if self.kind != "ess" and not 0 < self.target_acceptance < 1:
            raise ValueError("target_acceptance must lie in (0, 1)")


@dataclass(frozen=True)
class ScalarTarget:
    """Unnormalised 1-D target, optionally factored as likelihood x Gaussian prior.

    Use :meth:`from_factorization` when the target is
    ``exp(log_likelihood(x)) * N(x; prior_mean, prior_variance)``; the
    elliptical slice sampler needs that form.
    """

    log_density: Callable
    log_density_gradient: Optional[Callable] = None
    prior_mean: Optional[float] = None
    prior_variance: Optional[float] = None
    log_likelihood: Optional[Callable] = None

    @classmethod
    def from_factorization(cls, log_likelihood, prior_mean, prior_variance,
                           log_likelihood_gradient=None):
        mu = prior_mean
        v = prior_variance

        def log_density(x):
            return log_likelihood(x) - (x - mu) ** 2 / (2.0 * v)

        grad = None
        if log_likelihood_gradient is not None:
            def grad(x):
                return log_likelihood_gradient(x) - (x - mu) / v

        return cls(log_density, grad, prior_mean, prior_variance, log_likelihood)

    @property
    def has_factorization(self):
        return self.log_likelihood is not None and self.prior_variance is not None


def _size(x):
    shape = np.shape(x)
    return None if shape == () else shape


def _finite_or_neginf(v):
    v = np.asarray(v, dtype=float)
    return np.where(np.isfinite(v), v, -np.inf)


def _out(x, ref):
    return float(x) if np.ndim(ref) == 0 else x


def metropolis_step(target: ScalarTarget, current, config: KernelConfig, rng, step=None):
    """Random-walk Metropolis with a ``N(current, step**2)`` proposal.

    Returns ``(new, accepted)``; both are arrays when ``current`` is an array.
    """
    step = config.step if step is None else step
    size = _size(current)
    proposal = current + step * rng.standard_normal(size)
    u = rng.random(size)
    log_ratio = _finite_or_neginf(target.log_density(proposal)) - target.log_density(current)
    with np.errstate(divide="ignore"):
        accepted = np.log(u) < log_ratio
    new = np.where(accepted, proposal, current)
    return _out(new, current), (bool(accepted) if size is None else accepted)


def mala_log_ratio(target: ScalarTarget, x, x_star, step):
    """Log Metropolis-Hastings ratio for moving ``x -> x_star`` under MALA.

    Proposal density is ``N(x_star; x + step * grad log pi(x), 2 step)``.
    """
    grad = target.log_density_gradient

    def log_q(to, frm):
        mean = frm + step * grad(frm)
        return -((to - mean) ** 2) / (4.0 * step)

    return (_finite_or_neginf(target.log_density(x_star)) - target.log_density(x)
            + log_q(x, x_star) - log_q(x_star, x))


def mala_step(target: ScalarTarget, current, config: KernelConfig, rng, step=None):
    """Metropolis-adjusted Langevin step; needs ``target.log_density_gradient``."""
    if target.log_density_gradient is None:
        raise ValueError("MALA needs a target with log_density_gradient")
    step = config.step if step is None else step
    size = _size(current)
    mean = current + step * target.log_density_gradient(current)
    proposal = mean + np.sqrt(2.0 * step) * rng.standard_normal(size)
    u = rng.random(size)
    with np.errstate(invalid="ignore", over="ignore"):
        log_ratio = np.nan_to_num(mala_log_ratio(target, current, proposal, step), nan=-np.inf)
    with np.errstate(divide="ignore"):
        accepted = np.log(u) < log_ratio
    new = np.where(accepted, proposal, current)
    return _out(new, current), (bool(accepted) if size is None else accepted)


def ess_step(target: ScalarTarget, current, rng, return_shrinks=False):
    """Elliptical slice sampling move around the Gaussian prior's mean.

    The ellipse passes through ``current`` and an auxiliary prior draw ``nu``;
    points on it are ``mu + (current - mu) cos(phi) + (nu - mu) sin(phi)``.
    Rejected angles shrink the bracket towards ``phi = 0``, where the point
    equals ``current`` exactly, so the loop always ends on the slice.

    With ``return_shrinks=True`` also returns the number of bracket shrinks
    taken per coordinate.
    """
    if not target.has_factorization:
        raise ValueError("ESS needs a likelihood x Gaussian-prior target")
    size = _size(current)
    if size is None:
        new, shrinks = _ess_scalar(target, float(current), rng)
        return (new, shrinks) if return_shrinks else new
    x = np.asarray(current, dtype=float)
    mu = target.prior_mean
    sd = np.sqrt(target.prior_variance)
    nu = mu + sd * rng.standard_normal(size)
    with np.errstate(divide="ignore"):
        log_u = np.log(rng.random(size))
    phi = math.pi - 2.0 * math.pi * rng.random(size)  # (-pi, pi]
    lo = np.full(np.shape(x), -math.pi)
    hi = np.full(np.shape(x), math.pi)

    ll_cur = target.log_likelihood(x)
    threshold = log_u + ll_cur
    dx = x - mu
    dnu = nu - mu

    def point(angle):
        # x + dx (cos - 1) + dnu sin, written so that angle 0 returns x bit-exactly
        return x - 2.0 * dx * np.sin(0.5 * angle) ** 2 + dnu * np.sin(angle)

    prop = point(phi)
    done = _finite_or_neginf(target.log_likelihood(prop)) > threshold
    done = done | (phi == 0.0)
    shrinks = np.zeros(np.shape(x), dtype=np.int64)
    while not np.all(done):
        pos = phi > 0
        hi = np.where(~done & pos, phi, hi)
        lo = np.where(~done & ~pos, phi, lo)
        fresh = hi - (hi - lo) * rng.random(size)  # (lo, hi]
        phi = np.where(done, phi, fresh)
        shrinks += ~done
        cand = point(phi)
        ok = (_finite_or_neginf(target.log_likelihood(cand)) > threshold) | (phi == 0.0)
        newly = ~done & ok
        prop = np.where(newly, cand, prop)
        done = done | ok
    out = _out(prop, current)
    if return_shrinks:
        return out, shrinks
    return out


def _ess_scalar(target, x, rng):
    """Scalar version of :func:`ess_step` without array overhead; same draw order."""
    mu = float(target.prior_mean)
    nu = mu + math.sqrt(target.prior_variance) * rng.standard_normal()
    u = rng.random()
    log_u = math.log(u) if u > 0 else -math.inf
    phi = math.pi - 2.0 * math.pi * rng.random()
    lo, hi = -math.pi, math.pi
    ll = target.log_likelihood
    threshold = log_u + ll(x)
    dx, dnu = x - mu, nu - mu
    shrinks = 0
    while True:
        prop = x - 2.0 * dx * math.sin(0.5 * phi) ** 2 + dnu * math.sin(phi)
        val = ll(prop)
        if phi == 0.0 or (math.isfinite(val) and val > threshold):
            return prop, shrinks
        if phi > 0:
            hi = phi
        else:
            lo = phi
        phi = hi - (hi - lo) * rng.random()
        shrinks += 1


def adapt_step_size(step, accept_rate, k, config: KernelConfig):
    """Robbins-Monro update ``log step += k**-0.6 * (accept_rate - target)``.

    ``k`` counts adaptation updates from 1. Works elementwise on arrays of
    per-coordinate step sizes.
    """
    gain = float(k) ** -0.6
    log_step = np.log(step) + gain * (np.asarray(accept_rate, dtype=float)
                                      - config.target_acceptance)
    new = np.exp(np.clip(log_step, *_LOG_STEP_BOUNDS))
    return float(new) if np.ndim(new) == 0 else new
