"""Shared chain drivers for kernel-level tests."""

import numpy as np
from scipy import stats

from popkit.kernels import KernelConfig, ScalarTarget, adapt_step_size, ess_step, mala_step, metropolis_step


def gaussian_target(mean=0.0, var=1.0):
    return ScalarTarget(lambda x: -0.5 * (x - mean) ** 2 / var,
                        lambda x: -(x - mean) / var)


def conjugate_target(m=1.5, w=0.5, mu=-1.0, v=2.0):
    """Gaussian likelihood N(x; m, w) times a N(mu, v) prior, and its exact posterior."""
    tgt = ScalarTarget.from_factorization(lambda x: -0.5 * (x - m) ** 2 / w, mu, v,
                                          lambda x: -(x - m) / w)
    prec = 1 / w + 1 / v
    return tgt, stats.norm((m / w + mu / v) / prec, np.sqrt(1 / prec))


def mixture_target(sep=1.5, sd=1.0):
    """Equal-weight mixture of N(-sep, sd^2) and N(sep, sd^2)."""
    comp = [stats.norm(-sep, sd), stats.norm(sep, sd)]

    def logd(x):
        a = -0.5 * ((x + sep) / sd) ** 2
        b = -0.5 * ((x - sep) / sd) ** 2
        return np.logaddexp(a, b)

    def grad(x):
        # weight of the left component is a logistic in x
        wa = 1.0 / (1.0 + np.exp(2.0 * sep * x / sd**2))
        return -wa * (x + sep) / sd**2 - (1 - wa) * (x - sep) / sd**2

    class Mix:
        def cdf(self, q):
            return 0.5 * (comp[0].cdf(q) + comp[1].cdf(q))

    return ScalarTarget(logd, grad), Mix()


def run_chain_1d(kind, target, n_keep, burn_in=5000, step=1.0, seed=0, x0=0.0):
    """Scalar chain with burn-in adaptation; returns (draws, post-burn-in acceptance rate)."""
    rng = np.random.default_rng(seed)
    cfg = KernelConfig(kind=kind, step=step)
    x = float(x0)
    out = np.empty(n_keep)
    acc = 0
    for it in range(burn_in + n_keep):
        if kind == "ess":
            x = ess_step(target, x, rng)
            ok = True
        elif kind == "mala":
            x, ok = mala_step(target, x, cfg, rng, step)
        else:
            x, ok = metropolis_step(target, x, cfg, rng, step)
        if it < burn_in:
            if kind != "ess":
                step = adapt_step_size(step, float(ok), it + 1, cfg)
        else:
            out[it - burn_in] = x
            acc += ok
    return out, acc / n_keep
