import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from helpers import conjugate_target, gaussian_target, mixture_target, run_chain_1d
from popkit.kernels import (
    KernelConfig,
    ScalarTarget,
    adapt_step_size,
    ess_step,
    mala_log_ratio,
    mala_step,
    metropolis_step,
)


class ScriptedRng:
    """Returns queued values, for pinning individual draws."""

    def __init__(self, normals=(), uniforms=()):
        self.normals = list(normals)
        self.uniforms = list(uniforms)

    def standard_normal(self, size=None):
        return self.normals.pop(0)

    def random(self, size=None):
        return self.uniforms.pop(0)


def ks(draws, dist):
    return stats.kstest(draws, dist.cdf).statistic


def test_config_defaults_and_validation():
    assert KernelConfig().target_acceptance == 0.44
    assert KernelConfig(kind="mala").target_acceptance == 0.57
    with pytest.raises(ValueError):
        KernelConfig(step=0.0)
    with pytest.raises(ValueError):
        KernelConfig(kind="hmc")


@settings(max_examples=100, deadline=None)
@given(st.floats(-5, 5), st.floats(-3, 3), st.floats(0.1, 10))
def test_factorization_identity(x, mu, v):
    tgt = ScalarTarget.from_factorization(lambda z: np.sin(z) - z**2 / 7, mu, v)
    assert abs(tgt.log_density(x) - (tgt.log_likelihood(x) - (x - mu) ** 2 / (2 * v))) < 1e-10
    assert tgt.has_factorization


def test_metropolis_zero_increment_always_accepts():
    tgt = gaussian_target()
    x, ok = metropolis_step(tgt, 0.7, KernelConfig(), ScriptedRng([0.0], [0.999999]))
    assert ok and x == 0.7


def test_metropolis_matches_reference_implementation():
    tgt = gaussian_target(0.3, 2.0)
    cfg = KernelConfig(step=1.7)
    rng_a = np.random.default_rng(4)
    rng_b = np.random.default_rng(4)
    x = y = 0.0
    n_acc = n_ref = 0
    for _ in range(2000):
        x, ok = metropolis_step(tgt, x, cfg, rng_a)
        prop = y + 1.7 * rng_b.standard_normal()
        u = rng_b.random()
        # symmetric proposal: plain density ratio, no Hastings term
        if u < min(1.0, math.exp(tgt.log_density(prop) - tgt.log_density(y))):
            y = prop
            n_ref += 1
        n_acc += ok
        assert x == y
    assert n_acc == n_ref


def test_metropolis_rejects_non_finite():
    tgt = ScalarTarget(lambda x: np.where(x > 1, np.nan, -x**2))
    rng = np.random.default_rng(0)
    for _ in range(200):
        x, _ = metropolis_step(tgt, 0.0, KernelConfig(step=3.0), rng)
        assert x <= 1


def test_mala_proposal_mean_on_standard_normal():
    tgt = gaussian_target()
    d = 0.3
    x, ok = mala_step(tgt, 2.0, KernelConfig(kind="mala", step=d), ScriptedRng([0.0], [0.0]))
    assert x == pytest.approx(2.0 * (1 - d), rel=1e-15)


def test_mala_requires_gradient():
    with pytest.raises(ValueError):
        mala_step(ScalarTarget(lambda x: -x * x), 0.0, KernelConfig(kind="mala"),
                  np.random.default_rng(0))


@settings(max_examples=200, deadline=None)
@given(st.floats(-4, 4), st.floats(-4, 4), st.floats(0.01, 2))
def test_mala_ratio_reciprocity(x, y, d):
    tgt, _ = mixture_target()
    fwd = mala_log_ratio(tgt, x, y, d)
    bwd = mala_log_ratio(tgt, y, x, d)
    assert abs(fwd + bwd) < 1e-12 * max(1.0, abs(fwd))


def test_ess_phi_zero_is_identity():
    tgt = ScalarTarget.from_factorization(lambda x: -1e6 * (x - 3) ** 2, 0.0, 1.0)
    # u -> log threshold, phi = pi - 2 pi * 0.5 = 0
    x = ess_step(tgt, 0.123456789, ScriptedRng([1.0], [0.5, 0.5]))
    assert x == 0.123456789


def test_ess_requires_factorization():
    with pytest.raises(ValueError):
        ess_step(gaussian_target(), 0.0, np.random.default_rng(0))


def test_ess_vector_and_scalar_paths_agree():
    tgt = ScalarTarget.from_factorization(lambda x: -40.0 * (x - 1.0) ** 2, 0.0, 2.0)
    for seed in range(50):
        a = ess_step(tgt, 0.3, np.random.default_rng(seed))
        b = ess_step(tgt, np.array([0.3]), np.random.default_rng(seed))
        assert abs(a - b[0]) < 1e-14


@pytest.mark.parametrize("kind", ["metropolis", "mala", "ess"])
def test_determinism(kind):
    tgt, _ = conjugate_target()
    a, _ = run_chain_1d(kind, tgt, 300, burn_in=100, seed=21)
    b, _ = run_chain_1d(kind, tgt, 300, burn_in=100, seed=21)
    assert np.array_equal(a, b)


def test_adapt_step_size_rules():
    cfg = KernelConfig()
    assert adapt_step_size(0.5, 0.44, 7, cfg) == pytest.approx(0.5, rel=1e-15)
    s = 0.5
    for k in range(1, 50):
        new = adapt_step_size(s, 1.0, k, cfg)
        assert new > s
        s = new
    assert adapt_step_size(1e-8, 0.0, 1, cfg) == pytest.approx(1e-8)


def test_adapted_metropolis_acceptance_band():
    _, acc = run_chain_1d("metropolis", gaussian_target(), 20_000, burn_in=5000, step=0.01, seed=3)
    assert 0.3 <= acc <= 0.6


@pytest.mark.parametrize("kind,step", [("metropolis", 1.0), ("mala", 0.5)])
def test_standard_gaussian_moments(kind, step):
    x, _ = run_chain_1d(kind, gaussian_target(), 200_000, burn_in=5000, step=step, seed=10)
    from popkit.diagnostics import effective_sample_size

    se = math.sqrt(x.var() / effective_sample_size(x))
    assert abs(x.mean()) < 3 * se
    assert abs(x.var() - 1) < 0.05


def test_ess_flat_likelihood_gives_prior():
    tgt = ScalarTarget.from_factorization(lambda x: np.zeros_like(x) if np.ndim(x) else 0.0, 2.0, 3.0)
    x, _ = run_chain_1d("ess", tgt, 100_000, burn_in=1000, seed=12)
    from popkit.diagnostics import effective_sample_size

    se = math.sqrt(x.var() / effective_sample_size(x))
    assert abs(x.mean() - 2.0) < 3 * se
    assert abs(x.var() / 3.0 - 1) < 0.05


@pytest.mark.parametrize("kind", ["metropolis", "mala", "ess"])
def test_conjugate_stationarity(kind):
    tgt, post = conjugate_target()
    x, _ = run_chain_1d(kind, tgt, 100_000, burn_in=5000, seed=13)
    assert abs(x.mean() - post.mean()) < 0.02
    assert abs(x.var() / post.var() - 1) < 0.05
    assert ks(x, post) < 0.02


@pytest.mark.parametrize("kind,step", [("metropolis", 3.0), ("mala", 1.0)])
def test_mixture_stationarity(kind, step):
    tgt, dist = mixture_target()
    x, _ = run_chain_1d(kind, tgt, 100_000, burn_in=5000, step=step, seed=14)
    assert ks(x, dist) < 0.02


def test_gaussian_ks_all_kernels():
    tgt = ScalarTarget.from_factorization(lambda x: np.zeros_like(x) if np.ndim(x) else 0.0, 0.0, 1.0,
                                          lambda x: np.zeros_like(x) if np.ndim(x) else 0.0)
    for kind in ("metropolis", "mala", "ess"):
        x, _ = run_chain_1d(kind, tgt, 100_000, burn_in=5000, seed=15)
        assert ks(x, stats.norm()) < 0.02, kind


def test_ess_adversarial_terminates():
    # likelihood concentrated far from the prior: most angles are rejected
    tgt = ScalarTarget.from_factorization(lambda x: -1e4 * (x - 4.0) ** 2, 0.0, 1.0)
    x = np.full(2000, 4.0)
    x, shrinks = ess_step(tgt, x, np.random.default_rng(0), return_shrinks=True)
    assert np.all(np.isfinite(x)) and shrinks.max() < 200
