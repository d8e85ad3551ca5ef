"""Posterior summaries, autocorrelation-based ESS and predictive bands."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.special import expit

from .pk_math import log_mean_raw

QUANTILES = (0.025, 0.5, 0.975)
MIN_DRAWS = 10


@dataclass(frozen=True)
class ParameterSummary:
    name: str
    mean: float
    sd: float
    q025: float
    q50: float
    q975: float
    effective_sample_size: float
    autocorrelation: np.ndarray
    natural_mean: Optional[float] = None
    natural_q025: Optional[float] = None
    natural_q975: Optional[float] = None

    @property
    def quantiles(self):
        return {0.025: self.q025, 0.5: self.q50, 0.975: self.q975}


def autocorrelation(x, max_lag=None):
    """Sample autocorrelation at lags ``0..max_lag`` via FFT.

    A constant chain has no defined autocorrelation; it is reported as 1 at
    every lag so that its ESS collapses to 1.
    """
    x = np.asarray(x, dtype=float)
    n = x.size
    if max_lag is None:
        max_lag = n // 4
    max_lag = int(min(max_lag, n - 1))
    d = x - x.mean()
    var = float(np.dot(d, d))
    if var <= 0 or not np.isfinite(var):
        return np.ones(max_lag + 1)
    nfft = 1 << int(np.ceil(np.log2(2 * n)))
    fd = np.fft.rfft(d, nfft)
    acov = np.fft.irfft(fd * np.conj(fd), nfft)[: max_lag + 1]
    return acov / acov[0]


def effective_sample_size(x):
    """Single-chain ESS ``n / (1 + 2 sum rho_k)``.

    The sum stops before the first lag with ``rho_k <= 0.05`` or the first
    adjacent pair with negative sum, and never runs past ``n/4`` lags. The
    result is clipped to ``[1, n]``.
    """
    x = np.asarray(x, dtype=float)
    n = x.size
    rho = autocorrelation(x, n // 4)
    if np.all(rho == 1.0) and np.ptp(x) == 0:
        return 1.0
    total = 0.0
    for k in range(1, rho.size):
        if rho[k] <= 0.05:
            break
        if k + 1 < rho.size and rho[k] + rho[k + 1] < 0:
            break
        total += rho[k]
    return float(np.clip(n / (1.0 + 2.0 * total), 1.0, n))


def summarize_chain(name, x, transform=None, max_lag=50):
    x = np.asarray(x, dtype=float)
    q = np.quantile(x, QUANTILES)
    nat = (None, None, None)
    if transform is not None:
        # monotone transform: interval endpoints map through exactly
        nat = (float(np.mean(transform(x))), float(transform(q[0])), float(transform(q[2])))
    return ParameterSummary(
        name=name, mean=float(x.mean()), sd=float(x.std(ddof=1)) if x.size > 1 else 0.0,
        q025=float(q[0]), q50=float(q[1]), q975=float(q[2]),
        effective_sample_size=effective_sample_size(x),
        autocorrelation=autocorrelation(x, max_lag),
        natural_mean=nat[0], natural_q025=nat[1], natural_q975=nat[2],
    )


def summarize(draws):
    """Summaries for the population parameters plus natural-scale CL, V, ka and F."""
    if len(draws) < MIN_DRAWS:
        raise ValueError(f"need at least {MIN_DRAWS} draws, got {len(draws)}")
    out = []
    for l in range(3):
        out.append(summarize_chain(f"alpha{l + 1}", draws.alpha[:, l], np.exp))
    for l in range(3):
        out.append(summarize_chain(f"omega2_{l + 1}", draws.omega2[:, l]))
    out.append(summarize_chain("sigma2", draws.sigma2))
    out.append(summarize_chain("zeta", draws.zeta, expit))
    for l, name in enumerate(("CL_pop", "V_pop", "ka_pop")):
        out.append(summarize_chain(name, np.exp(draws.alpha[:, l])))
    out.append(summarize_chain("F", expit(draws.zeta)))
    return out


def predictive_band(draws, times, dose, patient=None, quantiles=QUANTILES):
    """Pointwise quantiles of the posterior concentration curve.

    ``patient`` is a row index into ``draws.theta``; ``None`` gives the
    population curve, evaluated at ``theta = alpha``. Returns an array of
    shape ``(len(times), len(quantiles))``.
    """
    times = np.asarray(times, dtype=float)
    if patient is None:
        th = draws.alpha
    else:
        th = draws.theta[:, patient, :]
    logc = log_mean_raw(th[:, 0:1], th[:, 1:2], th[:, 2:3], draws.zeta[:, None], dose,
                        times[None, :])
    return np.quantile(np.exp(logc), quantiles, axis=0).T


def gelman_rubin(chains):
    """Potential scale reduction across independent runs, ``chains`` of shape ``(m, n)``."""
    chains = np.asarray(chains, dtype=float)
    m, n = chains.shape
    if m < 2:
        raise ValueError("need at least two chains")
    means = chains.mean(axis=1)
    w = chains.var(axis=1, ddof=1).mean()
    b = n * means.var(ddof=1)
    var_plus = (n - 1) / n * w + b / n
    return float(np.sqrt(var_plus / w))
