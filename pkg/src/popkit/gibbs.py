"""Gibbs sampler for the one-compartment population model.

One iteration updates, in order: theta_1i, theta_2i, theta_3i for all
patients (within-Gibbs Metropolis / MALA / ESS), sigma2 (inverse gamma),
alpha_l (normal), omega2_l (inverse gamma) and finally the shared zeta.

Random numbers come from :mod:`popkit.rng`, keyed on
``(seed, iteration, block, round)``. Patient updates inside a theta block only
see their own slot of each round, so splitting patients across threads does
not change a single bit of the output.
"""

from __future__ import annotations

import logging
import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np
from scipy import stats
from scipy.special import expit, log_expit

from .kernels import KernelConfig, ScalarTarget, adapt_step_size, ess_step, mala_step, metropolis_step
from .model import ChainState, Dataset, Priors, mean_matrix, residual_ss_all
from .pk_math import grad_log_mean_raw
from .rng import PatientStream, _reset_round as _stream

log = logging.getLogger(__name__)

BLOCKS = ("theta1", "theta2", "theta3", "sigma2", "alpha", "omega2", "zeta", "ridge")
BLOCK_ID = {name: k for k, name in enumerate(BLOCKS)}
ZETA_KINDS = ("ess", "metropolis", "mala")


class DegenerateConditionalError(RuntimeError):
    """A conjugate conditional has a zero scale parameter."""


@dataclass(frozen=True)
class SamplerConfig:
    n_iterations: int = 20_000
    burn_in: int = 10_000
    thin: int = 1
    seed: int = 0
    theta_kernel: KernelConfig = field(default_factory=KernelConfig)
    zeta_kernel: str = "ess"
    zeta_step: float = 0.05
    ridge_move: bool = True
    ridge_step: float = 1.0
    parallel_patients: bool = False
    n_threads: Optional[int] = None

    def __post_init__(self):
        if self.n_iterations <= 0:
            raise ValueError("n_iterations must be > 0")
        if not 0 <= self.burn_in < self.n_iterations:
            raise ValueError("need 0 <= burn_in < n_iterations")
        if self.thin < 1:
            raise ValueError("thin must be >= 1")
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError("seed must be an unsigned 64-bit integer")
        if self.zeta_kernel not in ZETA_KINDS:
            raise ValueError(f"zeta_kernel must be one of {ZETA_KINDS}")
        if not self.zeta_step > 0 or not self.ridge_step > 0:
            raise ValueError("zeta_step and ridge_step must be > 0")

    @property
    def n_draws(self):
        return (self.n_iterations - self.burn_in) // self.thin

    def zeta_kernel_config(self):
        return KernelConfig(kind=self.zeta_kernel, step=self.zeta_step,
                            adapt_during_burnin=self.theta_kernel.adapt_during_burnin)

    def threads(self):
        if self.n_threads is not None:
            return max(1, int(self.n_threads))
        env = int(os.environ.get("POPKIT_THREADS", "0") or 0)
        return env if env > 0 else (os.cpu_count() or 1)


@dataclass
class PosteriorDraws:
    """Retained post-burn-in states stored column-wise."""

    iterations: np.ndarray
    theta: np.ndarray
    zeta: np.ndarray
    sigma2: np.ndarray
    alpha: np.ndarray
    omega2: np.ndarray
    patient_ids: list
    acceptance: dict = field(default_factory=dict)
    config: Optional[SamplerConfig] = None
    seed: Optional[int] = None
    step_sizes: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.iterations)

    def state(self, k):
        return ChainState(self.theta[k], self.zeta[k], self.sigma2[k],
                          self.alpha[k], self.omega2[k])

    @property
    def draws(self):
        return [self.state(k) for k in range(len(self))]

    def config_echo(self):
        return {} if self.config is None else asdict(self.config)


# ---------------------------------------------------------------------------
# full conditionals


def _theta_target(base, zeta, sigma2, alpha_l, omega2_l, data, col, rows,
                  with_likelihood=True):
    """Batched theta conditional; ``base`` rows are aligned with ``rows`` (all patients if None)."""
    y = data.log_conc if rows is None else data.log_conc[rows]
    mask = data.mask if rows is None else data.mask[rows]
    times = data.times if rows is None else data.times[rows]
    doses = data.doses if rows is None else data.doses[rows]

    def _with(x):
        th = base.copy()
        th[:, col] = x
        return th

    def log_likelihood(x):
        if not with_likelihood:
            return np.zeros_like(np.asarray(x, dtype=float))
        return -residual_ss_all(_with(x), zeta, data, rows) / (2.0 * sigma2)

    def log_likelihood_gradient(x):
        if not with_likelihood:
            return np.zeros_like(np.asarray(x, dtype=float))
        th = _with(x)
        f = mean_matrix(th, zeta, data, rows)
        g = grad_log_mean_raw(th[:, 0:1], th[:, 1:2], th[:, 2:3], zeta, doses[:, None], times)[col]
        return np.sum((y - f) * mask * g, axis=1) / sigma2

    return ScalarTarget.from_factorization(log_likelihood, alpha_l, omega2_l,
                                           log_likelihood_gradient)


def _single_patient_target(state, data, col, i, with_likelihood):
    """Conditional of one patient's theta; accepts a scalar or an array of candidate points."""
    def evaluate(name):
        def fn(x):
            xs = np.atleast_1d(np.asarray(x, dtype=float))
            rows = np.full(xs.size, i)
            theta = np.repeat(state.theta[i:i + 1], xs.size, axis=0)
            t = _theta_target(theta, state.zeta, state.sigma2, state.alpha[col],
                              state.omega2[col], data, col, rows, with_likelihood)
            out = getattr(t, name)(xs)
            return float(out[0]) if np.ndim(x) == 0 else out.reshape(np.shape(x))
        return fn

    return ScalarTarget(evaluate("log_density"), evaluate("log_density_gradient"),
                        state.alpha[col], state.omega2[col], evaluate("log_likelihood"))


def conditional_theta(state: ChainState, data: Dataset, priors: Priors, l: int, i=None,
                      with_likelihood=True) -> ScalarTarget:
    """Full conditional of ``theta_li`` (``l`` in 1..3).

    With an integer ``i`` the target is scalar. With ``i=None`` (all
    patients) or an index array, it is a batch of independent conditionals
    evaluated elementwise on an array of candidate values.
    """
    if l not in (1, 2, 3):
        raise ValueError("l must be 1, 2 or 3")
    col = l - 1
    if i is not None and np.ndim(i) == 0:
        return _single_patient_target(state, data, col, int(i), with_likelihood)
    rows = None if i is None else np.asarray(i)
    base = state.theta if rows is None else state.theta[rows]
    return _theta_target(base, state.zeta, state.sigma2, state.alpha[col],
                         state.omega2[col], data, col, rows, with_likelihood)


def conditional_zeta(state: ChainState, data: Dataset, priors: Priors,
                     with_likelihood=True) -> ScalarTarget:
    """Full conditional of the shared logit-bioavailability ``zeta`` (scalar target)."""
    return _zeta_target(state.theta, state.sigma2, data, priors, with_likelihood)


def _zeta_target(theta, sigma2, data, priors, with_likelihood=True):
    # zeta only shifts every log-mean by log F(zeta), so with r = y - f|_{F=1}
    # SS(zeta) = sum (r - rbar)^2 + n (rbar - log F)^2 exactly
    r = (data.log_conc - mean_matrix(theta, np.inf, data)) * data.mask
    n = data.total_obs
    rbar = float(r.sum()) / n
    spread = float(np.sum(((r - rbar) * data.mask) ** 2))

    def log_likelihood(z):
        if not with_likelihood:
            return np.zeros_like(z) if np.ndim(z) else 0.0
        ss = spread + n * (rbar - log_expit(z)) ** 2
        return -ss / (2.0 * sigma2) if np.ndim(z) else float(-ss / (2.0 * sigma2))

    def log_likelihood_gradient(z):
        if not with_likelihood:
            return np.zeros_like(z) if np.ndim(z) else 0.0
        g = n * (rbar - log_expit(z)) * expit(-np.asarray(z, dtype=float)) / sigma2
        return g if np.ndim(z) else float(g)

    return ScalarTarget.from_factorization(log_likelihood, 0.0, priors.zeta_prior_variance,
                                           log_likelihood_gradient)


def _inverse_gamma(shape, scale, rng, size=None):
    return scale / rng.standard_gamma(shape, size)


def sample_sigma2(state: ChainState, data: Dataset, rng, size=None):
    """Draw ``sigma2 ~ IG(sum M_i / 2, SS / 2)`` given the current fit."""
    ss = float(residual_ss_all(state.theta, state.zeta, data).sum())
    return _draw_sigma2(ss, data.total_obs, rng, size)


def _draw_sigma2(ss, total_obs, rng, size=None):
    if not ss > 0:
        raise DegenerateConditionalError(
            "total residual sum of squares is 0; sigma2 conditional is improper")
    return _inverse_gamma(0.5 * total_obs, 0.5 * ss, rng, size)


def sample_alpha(state: ChainState, l: int, rng, size=None):
    """Draw ``alpha_l ~ N(mean(theta_l), omega2_l / N)``."""
    col = l - 1
    return _draw_alpha(state.theta[:, col], state.omega2[col], rng, size)


def _draw_alpha(theta_l, omega2_l, rng, size=None):
    n = theta_l.shape[0]
    return float(np.mean(theta_l)) + np.sqrt(omega2_l / n) * rng.standard_normal(size)


def sample_omega2(state: ChainState, l: int, rng, size=None):
    """Draw ``omega2_l ~ IG(N / 2, ||theta_l - alpha_l||^2 / 2)``."""
    col = l - 1
    return _draw_omega2(state.theta[:, col], state.alpha[col], rng, size)


def _draw_omega2(theta_l, alpha_l, rng, size=None):
    dev = theta_l - alpha_l
    ss = float(np.dot(dev, dev))
    if not ss > 0:
        raise DegenerateConditionalError("all theta_l equal alpha_l; omega2 conditional is improper")
    return _inverse_gamma(0.5 * theta_l.shape[0], 0.5 * ss, rng, size)


def log_conditional_sigma2(state: ChainState, data: Dataset, value):
    ss = float(residual_ss_all(state.theta, state.zeta, data).sum())
    return stats.invgamma.logpdf(value, 0.5 * data.total_obs, scale=0.5 * ss)


def log_conditional_alpha(state: ChainState, l: int, value):
    col = l - 1
    n = state.theta.shape[0]
    return stats.norm.logpdf(value, state.theta[:, col].mean(), np.sqrt(state.omega2[col] / n))


def log_conditional_omega2(state: ChainState, l: int, value):
    col = l - 1
    dev = state.theta[:, col] - state.alpha[col]
    return stats.invgamma.logpdf(value, 0.5 * dev.size, scale=0.5 * float(dev @ dev))


def ridge_log_ratio(theta, zeta, alpha, sigma2, zeta_new, data, priors):
    """Log acceptance ratio and proposed values for a ridge translation.

    Oral data only inform ``CL/F`` and ``V/F``: moving ``zeta`` while adding
    ``c = log F(zeta_new) - log F(zeta)`` to every ``theta_1i``, ``theta_2i``,
    ``alpha_1`` and ``alpha_2`` leaves the likelihood and the population
    prior unchanged. The map has unit Jacobian, so the ratio reduces to the
    ``zeta`` prior ratio; residual terms are still evaluated to absorb rounding.
    """
    c = float(log_expit(zeta_new) - log_expit(zeta))
    shift = np.array([c, c, 0.0])
    theta_new = theta + shift
    alpha_new = alpha + shift
    ss_old = float(residual_ss_all(theta, zeta, data).sum())
    ss_new = float(residual_ss_all(theta_new, zeta_new, data).sum())
    lr = -(ss_new - ss_old) / (2.0 * sigma2)
    lr -= (zeta_new**2 - zeta**2) / (2.0 * priors.zeta_prior_variance)
    return lr, theta_new, alpha_new


# ---------------------------------------------------------------------------
# initialisation


def initial_state(data: Dataset, f0=0.9) -> ChainState:
    """Per-patient curve sketching.

    ``V`` from the peak concentration assuming bioavailability ``f0``, ``ke``
    from a log-linear fit of the last three observations, ``ka = 3 ke``.
    """
    rows = []
    slopes = []
    for p in data.patients:
        k = min(3, p.n_obs)
        ke = np.nan
        if k >= 2:
            ke = -np.polyfit(p.times[-k:], p.log_conc[-k:], 1)[0]
        slopes.append(ke)
    slopes = np.asarray(slopes)
    good = np.isfinite(slopes) & (slopes > 0)
    fallback = float(np.median(slopes[good])) if np.any(good) else 0.1
    for p, ke in zip(data.patients, slopes):
        if not (np.isfinite(ke) and ke > 0):
            ke = fallback
        th2 = np.log(f0 * p.dose) - float(np.max(p.log_conc))
        rows.append([th2 + np.log(ke), th2, np.log(3.0 * ke)])
    theta = np.array(rows)
    zeta = 0.0
    ss = float(residual_ss_all(theta, zeta, data).sum())
    sigma2 = max(ss / data.total_obs, 1e-4)
    alpha = theta.mean(axis=0)
    omega2 = np.maximum(theta.var(axis=0), 1e-2) if data.n_patients > 1 else np.ones(3)
    return ChainState(theta, zeta, sigma2, alpha, omega2)


# ---------------------------------------------------------------------------
# driver


def _step(kind, target, current, config, rng, step):
    if kind == "metropolis":
        return metropolis_step(target, current, config, rng, step=step)
    if kind == "mala":
        return mala_step(target, current, config, rng, step=step)
    new = ess_step(target, current, rng)
    return new, np.ones(np.shape(current), dtype=bool) if np.ndim(current) else True


def run_chain(data: Dataset, priors: Priors, config: SamplerConfig,
              init: Optional[ChainState] = None, frozen=(), with_likelihood=True,
              progress=None) -> PosteriorDraws:
    """Run one Gibbs chain and return thinned post-burn-in draws.

    ``frozen`` names blocks (see :data:`BLOCKS`) held at their initial value,
    and ``with_likelihood=False`` replaces the likelihood in the theta and
    zeta conditionals by a constant. Both are test hooks for checking single
    conditionals in isolation.
    """
    frozen = set(frozen)
    unknown = frozen - set(BLOCKS)
    if unknown:
        raise ValueError(f"unknown blocks {sorted(unknown)}")
    if not {"alpha", "omega2"} <= frozen:
        data.check_fittable()
    state = initial_state(data) if init is None else init
    if state.theta.shape[0] != data.n_patients:
        raise ValueError("init theta rows do not match the number of patients")

    n = data.n_patients
    theta = np.array(state.theta, dtype=float)
    zeta, sigma2 = state.zeta, state.sigma2
    alpha = np.array(state.alpha, dtype=float)
    omega2 = np.array(state.omega2, dtype=float)

    tk = config.theta_kernel
    zk = config.zeta_kernel_config()
    theta_steps = np.full((3, n), tk.step)
    zeta_step = zk.step
    theta_acc = np.zeros((3, n))
    zeta_acc = 0.0
    ridge_step = config.ridge_step
    ridge_acc = 0.0
    ridge_cfg = KernelConfig(kind="metropolis", step=ridge_step)
    # the ridge move shifts zeta, alpha and theta_1, theta_2 together
    if not config.ridge_move or frozen & {"zeta", "alpha", "theta1", "theta2"}:
        frozen.add("ridge")
    seed = int(config.seed)

    n_keep = config.n_draws
    out_iter = np.zeros(n_keep, dtype=np.int64)
    out_theta = np.zeros((n_keep, n, 3))
    out_zeta = np.zeros(n_keep)
    out_sigma2 = np.zeros(n_keep)
    out_alpha = np.zeros((n_keep, 3))
    out_omega2 = np.zeros((n_keep, 3))

    chunks = [None]
    pool = None
    if config.parallel_patients:
        n_chunks = min(config.threads(), n)
        if n_chunks > 1:
            chunks = [c for c in np.array_split(np.arange(n), n_chunks)]
            pool = ThreadPoolExecutor(max_workers=n_chunks)

    def update_chunk(it, col, rows):
        base = theta if rows is None else theta[rows]
        target = _theta_target(base, zeta, sigma2, alpha[col], omega2[col], data, col,
                               rows, with_likelihood)
        stream = PatientStream(seed, it, col, n, rows)
        current = theta[:, col] if rows is None else theta[rows, col]
        steps = theta_steps[col] if rows is None else theta_steps[col, rows]
        return _step(tk.kind, target, current, tk, stream, steps)

    kept = 0
    try:
        for it in range(config.n_iterations):
            burning = it < config.burn_in
            block = "?"
            try:
                for col in range(3):
                    block = BLOCKS[col]
                    if block in frozen:
                        continue
                    if pool is None:
                        new, acc = update_chunk(it, col, None)
                    else:
                        parts = list(pool.map(lambda r: update_chunk(it, col, r), chunks))
                        new = np.concatenate([p[0] for p in parts])
                        acc = np.concatenate([p[1] for p in parts])
                    theta[:, col] = new
                    if burning:
                        if tk.adapt_during_burnin and tk.kind != "ess":
                            theta_steps[col] = adapt_step_size(theta_steps[col], acc, it + 1, tk)
                    else:
                        theta_acc[col] += acc

                block = "sigma2"
                if block not in frozen:
                    ss = float(residual_ss_all(theta, zeta, data).sum())
                    sigma2 = float(_draw_sigma2(ss, data.total_obs, _stream(seed, it, 3, 0)))
                block = "alpha"
                if block not in frozen:
                    g = _stream(seed, it, 4, 0)
                    for col in range(3):
                        alpha[col] = _draw_alpha(theta[:, col], omega2[col], g)
                block = "omega2"
                if block not in frozen:
                    g = _stream(seed, it, 5, 0)
                    for col in range(3):
                        omega2[col] = _draw_omega2(theta[:, col], alpha[col], g)
                block = "zeta"
                if block not in frozen:
                    target = _zeta_target(theta, sigma2, data, priors, with_likelihood)
                    zeta, acc = _step(zk.kind, target, zeta, zk, _stream(seed, it, 6, 0), zeta_step)
                    zeta = float(zeta)
                    if burning:
                        if zk.adapt_during_burnin and zk.kind != "ess":
                            zeta_step = adapt_step_size(zeta_step, float(acc), it + 1, zk)
                    else:
                        zeta_acc += float(acc)
                block = "ridge"
                if block not in frozen:
                    g = _stream(seed, it, 7, 0)
                    z_new = zeta + ridge_step * g.standard_normal()
                    lr, th_new, al_new = ridge_log_ratio(theta, zeta, alpha, sigma2, z_new,
                                                         data, priors)
                    ok = bool(np.log(g.random()) < lr)
                    if ok:
                        theta, alpha, zeta = th_new, al_new, float(z_new)
                    if burning:
                        if tk.adapt_during_burnin:
                            ridge_step = adapt_step_size(ridge_step, float(ok), it + 1, ridge_cfg)
                    else:
                        ridge_acc += float(ok)
            except DegenerateConditionalError as exc:
                raise DegenerateConditionalError(
                    f"iteration {it + 1}, block {block}: {exc}") from exc

            if not burning and (it - config.burn_in + 1) % config.thin == 0:
                out_iter[kept] = it + 1
                out_theta[kept] = theta
                out_zeta[kept] = zeta
                out_sigma2[kept] = sigma2
                out_alpha[kept] = alpha
                out_omega2[kept] = omega2
                kept += 1
            if progress is not None:
                progress(it + 1)
    finally:
        if pool is not None:
            pool.shutdown()

    n_post = config.n_iterations - config.burn_in
    acceptance = {BLOCKS[c]: float(theta_acc[c].mean() / n_post) for c in range(3)}
    acceptance["zeta"] = zeta_acc / n_post
    if "ridge" not in frozen:
        acceptance["ridge"] = ridge_acc / n_post
    draws = PosteriorDraws(
        iterations=out_iter, theta=out_theta, zeta=out_zeta, sigma2=out_sigma2,
        alpha=out_alpha, omega2=out_omega2, patient_ids=data.patient_ids,
        acceptance=acceptance, config=config, seed=seed,
        step_sizes={"theta": theta_steps.copy(), "zeta": zeta_step, "ridge": ridge_step},
    )
    _check_confounding(draws, frozen)
    return draws


def _check_confounding(draws, frozen):
    if len(draws) < 10 or {"zeta", "alpha"} & frozen:
        return
    z, a2 = draws.zeta, draws.alpha[:, 1]
    if np.std(z) == 0 or np.std(a2) == 0:
        return
    r = float(np.corrcoef(z, a2)[0, 1])
    if abs(r) > 0.95:
        warnings.warn(f"posterior corr(zeta, alpha2) = {r:.3f}: bioavailability and volume "
                      "are only weakly identified separately", stacklevel=3)
