"""Tests for the inner Langevin chains and the posterior score estimator."""

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pdps.models import (
    IsotropicGaussianMixture,
    LinearGaussianLikelihood,
    ProblemSpec,
    gmm_constants,
    gmm_hessian,
)
from pdps.oracle import exact_posterior, exact_score, exact_timet_posterior
from pdps.rgo import (
    DivergenceError,
    ParticleBatch,
    RgoConfig,
    estimate_denoiser,
    estimate_posterior_score,
    rgo_drift,
    rgo_sample,
    rgo_step_size,
)
from pdps.schedule import OUSchedule, bar_t, mu, sigma2

SCHEDULE = OUSchedule()
WIDE_CLAMP = (1e-15, 1e6)


def gaussian_problem(y=0.0):
    prior = IsotropicGaussianMixture([1.0], [0.0], [1.0])
    lik = LinearGaussianLikelihood(np.array([[1.0]]), np.array([float(y)]), 1.0)
    return ProblemSpec(prior=prior, likelihood=lik)


def bimodal_problem():
    prior = IsotropicGaussianMixture([0.5, 0.5], [-2.0, 2.0], [0.25, 0.25])
    lik = LinearGaussianLikelihood(np.array([[1.0]]), np.array([1.0]), 1.0)
    return ProblemSpec(prior=prior, likelihood=lik)


def rgo_log_density(problem, t, x, x0):
    """Log of the inner target: log prior - l_y - |x - mu x0|^2 / (2 s2)."""
    r = x - mu(t) * x0
    return (
        problem.prior.log_density_unnormalized(x0)
        - problem.likelihood.neg_log(x0)
        - 0.5 * float(r @ r) / sigma2(t)
    )


class TestConfig:
    def test_defaults(self):
        cfg = RgoConfig(n_in=50)
        assert cfg.snr_in == 0.075
        assert cfg.m_chains == 20
        assert cfg.burn_in_fraction == 0.5

    def test_validation(self):
        with pytest.raises(ValueError):
            RgoConfig(n_in=-1)
        with pytest.raises(ValueError):
            RgoConfig(n_in=10, snr_in=0.0)
        with pytest.raises(ValueError):
            RgoConfig(n_in=10, m_chains=0)
        with pytest.raises(ValueError):
            RgoConfig(n_in=10, burn_in_fraction=1.0)
        with pytest.raises(ValueError):
            RgoConfig(n_in=10, step_clamp=(0.0, 1.0))
        # floor(rho * M * n_in) = 0 starves the particle pool.
        with pytest.raises(ValueError):
            RgoConfig(n_in=1, m_chains=1)

    def test_tail_steps(self):
        assert RgoConfig(n_in=50).tail_steps == 25
        assert RgoConfig(n_in=5, burn_in_fraction=0.6).tail_steps == 2


class TestParticleBatch:
    def test_validation(self):
        with pytest.raises(ValueError):
            ParticleBatch(np.zeros(3))
        with pytest.raises(ValueError):
            ParticleBatch(np.array([[np.nan]]))

    def test_immutable_fields(self):
        batch = ParticleBatch(np.zeros((2, 1)))
        with pytest.raises(Exception):
            batch.particles = np.ones((2, 1))


class TestDrift:
    def test_all_terms_vanish(self):
        prob = gaussian_problem(y=0.0)
        lik0 = LinearGaussianLikelihood(np.array([[0.0]]), np.array([0.0]), 1.0)
        prob0 = ProblemSpec(prior=prob.prior, likelihood=lik0)
        out = rgo_drift(prob0, SCHEDULE, 0.3, np.array([0.0]), np.array([0.0]))
        np.testing.assert_allclose(out, [0.0])

    def test_gaussian_value(self):
        # prior term 0 at x0 = 0; tether term mu/sigma2 at t = 0.2 times x.
        prob = gaussian_problem(y=0.0)
        out = rgo_drift(prob, SCHEDULE, 0.2, np.array([1.0]), np.array([0.0]))
        expect = math.exp(-0.2) / -math.expm1(-0.4)
        np.testing.assert_allclose(out, [expect], rtol=1e-12)
        assert abs(expect - 2.48342) < 1e-5

    def test_rejects_zero_time(self):
        prob = gaussian_problem()
        with pytest.raises(ValueError):
            rgo_drift(prob, SCHEDULE, 0.0, np.array([1.0]), np.array([0.0]))

    def test_gradient_of_target_1d(self):
        # The drift must be the gradient of the inner target's log density.
        prob = bimodal_problem()
        consts = gmm_constants(prob.prior)
        rng = np.random.default_rng(17)
        h = 1e-6
        for _ in range(50):
            t = float(rng.uniform(0.1, 0.95)) * bar_t(consts.alpha)
            x = rng.uniform(-2.5, 2.5, size=1)
            x0 = rng.uniform(-3.0, 3.0, size=1)
            fd = (
                rgo_log_density(prob, t, x, x0 + h)
                - rgo_log_density(prob, t, x, x0 - h)
            ) / (2.0 * h)
            drift = rgo_drift(prob, SCHEDULE, t, x, x0)[0]
            np.testing.assert_allclose(drift, fd, rtol=1e-5, atol=1e-4)

    def test_gradient_of_target_2d(self):
        prior = IsotropicGaussianMixture(
            [0.4, 0.6], [[-1.0, 0.5], [1.5, -0.5]], [0.5, 0.8]
        )
        lik = LinearGaussianLikelihood(
            np.array([[1.0, 0.3], [0.0, 0.8]]), np.array([0.5, -0.2]), 0.7
        )
        prob = ProblemSpec(prior=prior, likelihood=lik)
        rng = np.random.default_rng(23)
        h = 1e-6
        for _ in range(20):
            t = float(rng.uniform(0.05, 0.5))
            x = rng.uniform(-2.0, 2.0, size=2)
            x0 = rng.uniform(-2.0, 2.0, size=2)
            drift = rgo_drift(prob, SCHEDULE, t, x, x0)
            for j in range(2):
                e = np.zeros(2)
                e[j] = h
                fd = (
                    rgo_log_density(prob, t, x, x0 + e)
                    - rgo_log_density(prob, t, x, x0 - e)
                ) / (2.0 * h)
                np.testing.assert_allclose(drift[j], fd, rtol=1e-5, atol=1e-4)

    def test_batched_rows_match_solo(self):
        prob = bimodal_problem()
        x = np.array([0.7])
        x0s = np.array([[-1.0], [0.0], [2.0]])
        batched = rgo_drift(prob, SCHEDULE, 0.3, x, x0s)
        for row, x0 in zip(batched, x0s):
            np.testing.assert_allclose(
                row, rgo_drift(prob, SCHEDULE, 0.3, x, x0)
            )


class TestStepSize:
    def test_algebraic_identity(self):
        # mean_drift_norm = snr * sqrt(d) gives dt = 2 before clamping.
        d = 3
        dt = rgo_step_size(0.4, 0.4 * math.sqrt(d), d, clamp=WIDE_CLAMP)
        np.testing.assert_allclose(dt, 2.0)

    def test_zero_norm_engages_clamp(self):
        assert rgo_step_size(0.075, 0.0, 1, clamp=(1e-10, 0.25)) == 0.25

    def test_arithmetic_value(self):
        dt = rgo_step_size(0.075, 2.48342, 1, clamp=WIDE_CLAMP)
        np.testing.assert_allclose(dt, 1.8243e-3, rtol=2e-4)

    def test_validation(self):
        with pytest.raises(ValueError):
            rgo_step_size(0.0, 1.0, 1)
        with pytest.raises(ValueError):
            rgo_step_size(0.1, -1.0, 1)

    @settings(max_examples=200, deadline=None)
    @given(
        snr=st.floats(1e-3, 10.0),
        norm=st.floats(0.0, 1e6),
        bigger=st.floats(1.0, 1e3),
        d=st.integers(1, 8),
    )
    def test_clamped_and_monotone(self, snr, norm, bigger, d):
        lo, hi = 1e-10, 0.25
        dt = rgo_step_size(snr, norm, d, clamp=(lo, hi))
        assert lo <= dt <= hi
        # Larger drift norm never increases the step.
        assert rgo_step_size(snr, norm * bigger, d, clamp=(lo, hi)) <= dt


class TestRgoSample:
    def test_zero_steps_returns_init_tail(self):
        init = ParticleBatch(np.arange(8.0)[:, None])
        cfg = RgoConfig(n_in=0, m_chains=4)
        out = rgo_sample(
            gaussian_problem(), SCHEDULE, 0.2, np.array([0.0]), cfg, init=init
        )
        np.testing.assert_array_equal(out.particles, init.particles[-4:])

    def test_zero_steps_requires_init(self):
        cfg = RgoConfig(n_in=0, m_chains=4)
        with pytest.raises(ValueError):
            rgo_sample(gaussian_problem(), SCHEDULE, 0.2, np.array([0.0]), cfg)

    def test_gaussian_pure_prior_mean(self):
        # l = 0: the inner target is N((mu x / s2) / (1 + mu^2/s2), .) and
        # the pooled mean must sit within 3 SE of its mean (SE taken over
        # the nearly independent per-chain means).
        prior = IsotropicGaussianMixture([1.0], [0.0], [1.0])
        lik0 = LinearGaussianLikelihood(np.array([[0.0]]), np.array([0.0]), 1.0)
        prob = ProblemSpec(prior=prior, likelihood=lik0)
        t, x = 0.25, np.array([1.2])
        ratio = mu(t) / sigma2(t)
        target_mean = ratio * x[0] / (1.0 + mu(t) * ratio)
        cfg = RgoConfig(n_in=400, m_chains=20)
        out = rgo_sample(prob, SCHEDULE, t, x, cfg, rng=np.random.default_rng(0))
        per_chain = out.particles.reshape(-1, cfg.m_chains).mean(axis=0)
        se = per_chain.std(ddof=1) / math.sqrt(cfg.m_chains)
        assert abs(per_chain.mean() - target_mean) < 3.0 * se

    def test_bimodal_mass_concentrates(self):
        # Tether near the scaled right mode: the left mode is priced out.
        prob = bimodal_problem()
        t = 0.05
        x = np.array([mu(t) * 2.0])
        # The SNR rule shrinks the step while the drift toward the distant
        # tether center is large, so transport there takes a few thousand
        # steps and the pooled tail must start after the slowest chain has
        # crossed over.
        cfg = RgoConfig(n_in=4000, m_chains=20)
        out = rgo_sample(prob, SCHEDULE, t, x, cfg, rng=np.random.default_rng(1))
        assert np.mean(out.particles[:, 0] > 0.0) >= 0.99

    def test_determinism(self):
        prob = bimodal_problem()
        cfg = RgoConfig(n_in=40)
        a = rgo_sample(prob, SCHEDULE, 0.3, np.array([0.5]), cfg,
                       rng=np.random.default_rng(7))
        b = rgo_sample(prob, SCHEDULE, 0.3, np.array([0.5]), cfg,
                       rng=np.random.default_rng(7))
        np.testing.assert_array_equal(a.particles, b.particles)
        c = rgo_sample(prob, SCHEDULE, 0.3, np.array([0.5]), cfg,
                       rng=np.random.default_rng(8))
        assert not np.array_equal(a.particles, c.particles)

    def test_pool_size_and_source(self):
        prob = gaussian_problem()
        cfg = RgoConfig(n_in=50, m_chains=20)
        out = rgo_sample(prob, SCHEDULE, 0.2, np.array([1.0]), cfg,
                         rng=np.random.default_rng(2))
        assert out.particles.shape == (cfg.tail_steps * cfg.m_chains, 1)
        t, x, y = out.source
        assert t == 0.2 and x[0] == 1.0 and y[0] == 0.0

    def test_short_init_rejected(self):
        prob = gaussian_problem()
        cfg = RgoConfig(n_in=10, m_chains=20)
        init = ParticleBatch(np.zeros((5, 1)))
        with pytest.raises(ValueError):
            rgo_sample(prob, SCHEDULE, 0.2, np.array([0.0]), cfg, init=init)

    def test_rejects_zero_time(self):
        with pytest.raises(ValueError):
            rgo_sample(gaussian_problem(), SCHEDULE, 0.0, np.array([0.0]),
                       RgoConfig(n_in=10))

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_divergence_error_names_step(self):
        # An absurd likelihood scale overflows the chains within a few steps.
        prior = IsotropicGaussianMixture([1.0], [0.0], [1.0])
        lik = LinearGaussianLikelihood(
            np.array([[1.0]]), np.array([1e300]), 1e-6
        )
        prob = ProblemSpec(prior=prior, likelihood=lik)
        with pytest.raises(DivergenceError, match="inner step"):
            rgo_sample(prob, SCHEDULE, 0.2, np.array([0.0]),
                       RgoConfig(n_in=50), rng=np.random.default_rng(3))


class TestDenoiserEstimate:
    def test_constant_batch(self):
        batch = ParticleBatch(np.full((6, 2), 3.5))
        np.testing.assert_allclose(estimate_denoiser(batch), [3.5, 3.5])

    def test_two_point_mean(self):
        batch = ParticleBatch(np.array([[0.0], [2.0]]))
        np.testing.assert_allclose(estimate_denoiser(batch), [1.0])

    def test_empty_batch_rejected(self):
        with pytest.raises(ValueError):
            estimate_denoiser(ParticleBatch(np.zeros((0, 1))))


def mean_rel_err(est, exact):
    """Aggregate relative error: mean |err| over mean |exact|. The naive
    per-point ratio is undefined at points where the exact score vanishes."""
    est = np.asarray(est, dtype=float)
    exact = np.asarray(exact, dtype=float)
    return float(np.mean(np.abs(est - exact)) / np.mean(np.abs(exact)))


class TestScoreEstimate:
    def test_tweedie_fixed_point(self):
        # A batch pinned at x / mu_t makes the estimated score exactly zero.
        prob = gaussian_problem()
        t, x = 0.3, np.array([0.8])
        init = ParticleBatch(np.full((8, 1), x[0] / mu(t)))
        cfg = RgoConfig(n_in=0, m_chains=8)
        out = estimate_posterior_score(prob, SCHEDULE, t, x, cfg, init=init)
        np.testing.assert_allclose(out, [0.0], atol=1e-14)

    def test_gaussian_reference_point(self):
        # Exact: q_t = N(0, mu^2/2 + s2) at t = 0.2, score(1) = -1.50410.
        prob = gaussian_problem(y=0.0)
        cfg = RgoConfig(n_in=2000, m_chains=200)
        est = estimate_posterior_score(
            prob, SCHEDULE, 0.2, np.array([1.0]), cfg,
            rng=np.random.default_rng(4),
        )
        exact = -1.0 / (mu(0.2) ** 2 * 0.5 + sigma2(0.2))
        assert abs(exact + 1.50410) < 5e-5
        assert abs(est[0] - exact) / abs(exact) < 0.05

    def test_bimodal_three_points(self):
        # Standalone estimation at a point between the prior lobes is the
        # hard case: chains seeded on the wrong side of the prior saddle
        # relax toward the posterior lobe on a slow metastable timescale,
        # so the relaxation budget must be large.
        prob = bimodal_problem()
        post = exact_posterior(prob.prior, prob.likelihood)
        mix = exact_timet_posterior(post, SCHEDULE, 0.2)
        cfg = RgoConfig(n_in=30000, m_chains=40)
        ests, exacts = [], []
        for i, xv in enumerate((-1.0, 0.0, 1.0)):
            x = np.array([xv])
            ests.append(
                estimate_posterior_score(
                    prob, SCHEDULE, 0.2, x, cfg,
                    rng=np.random.default_rng(40 + i),
                )[0]
            )
            exacts.append(exact_score(mix, x)[0])
        assert mean_rel_err(ests, exacts) < 0.05

    def test_error_shrinks_with_more_particles(self):
        # Ten times the pooled particles should at least halve the median
        # error (paired seeds, 21 repeats).
        prob = gaussian_problem(y=0.0)
        exact = -1.0 / (mu(0.2) ** 2 * 0.5 + sigma2(0.2))
        small = RgoConfig(n_in=100, m_chains=20)
        big = RgoConfig(n_in=1000, m_chains=20)
        ratios = []
        for seed in range(21):
            e = []
            for cfg in (small, big):
                est = estimate_posterior_score(
                    prob, SCHEDULE, 0.2, np.array([1.0]), cfg,
                    rng=np.random.default_rng(1000 + seed),
                )
                e.append(abs(est[0] - exact))
            ratios.append(e[1] / e[0])
        assert np.median(ratios) <= 0.5


class TestLogConcavityRegime:
    def test_hessian_lower_bound(self):
        # Below bar_t the inner target's negative Hessian dominates
        # (mu^2/s2 - alpha) I; the linear-likelihood term only helps.
        prob = bimodal_problem()
        consts = gmm_constants(prob.prior)
        tbar = bar_t(consts.alpha)
        lik_curv = float((prob.likelihood.A.T @ prob.likelihood.A)[0, 0]) \
            / prob.likelihood.noise_std**2
        rng = np.random.default_rng(29)
        for _ in range(50):
            t = float(rng.uniform(0.05, 0.999)) * tbar
            x0 = rng.uniform(-4.0, 4.0, size=1)
            ratio = mu(t) ** 2 / sigma2(t)
            neg_hess = -gmm_hessian(prob.prior, x0)[0, 0] + ratio + lik_curv
            assert neg_hess >= ratio - consts.alpha - 1e-9
