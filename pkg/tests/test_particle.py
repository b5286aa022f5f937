import math

import numpy as np
import pytest

from chaoscast.dynamics import LorenzParams, attractor_trajectory, observe
from chaoscast.filtering import (
    ParticleEnsemble,
    StateSpaceModel,
    UtParams,
    effective_sample_size,
    kalman_step,
    lorenz_model,
    pf_init,
    pf_step,
    resample,
    systematic_indices,
    ukf_proposal,
)
from chaoscast.noise import Gaussian, Laplace, PointMass

A = 0.99 * np.array([[math.cos(0.1), -math.sin(0.1)], [math.sin(0.1), math.cos(0.1)]])
Q = 0.01 * np.eye(2)
R = 0.25 * np.eye(2)
LINEAR = StateSpaceModel(lambda z, th: z @ A.T, Gaussian(0.0, 0.1), Gaussian(0.0, 0.5))


def simulate_linear(steps, rng):
    z = np.array([1.0, -1.0])
    xs = []
    for _ in range(steps):
        z = A @ z + rng.normal(0, 0.1, 2)
        xs.append(z + rng.normal(0, 0.5, 2))
    return np.array(xs)


def lorenz_data(steps, seed):
    rng = np.random.default_rng(seed)
    p = LorenzParams()
    tr = attractor_trajectory(p, 0.01, steps, rng, Gaussian(0, 0.1))
    return observe(tr, Gaussian(0, 0.8), rng).observations


class TestInit:
    def test_single_particle(self, rng):
        ens = pf_init(np.zeros(3), 2 * np.eye(3), 1, rng)
        assert ens.particles.shape == (1, 3)
        np.testing.assert_array_equal(ens.weights, [1.0])

    def test_sample_mean(self, rng):
        mean = np.array([1.0, -2.0, 25.0])
        ens = pf_init(mean, 2 * np.eye(3), 100_000, rng)
        assert np.all(np.abs(ens.particles.mean(axis=0) - mean) <= 3 * math.sqrt(2 / 100_000))
        np.testing.assert_allclose(ens.weights, 1e-5, rtol=1e-12)

    def test_zero_cov(self, rng):
        mean = np.array([1.0, 2.0, 3.0])
        ens = pf_init(mean, np.zeros((3, 3)), 50, rng)
        np.testing.assert_array_equal(ens.particles, np.broadcast_to(mean, (50, 3)))

    def test_rejects_zero_particles(self, rng):
        with pytest.raises(ValueError):
            pf_init(np.zeros(3), np.eye(3), 0, rng)


class TestEss:
    def test_uniform(self):
        assert effective_sample_size(np.full(100, 0.01)) == pytest.approx(100.0, rel=1e-12)

    def test_degenerate(self):
        assert effective_sample_size([0.0, 1.0, 0.0]) == 1.0

    def test_unequal(self):
        assert effective_sample_size([0.5, 0.25, 0.25]) == pytest.approx(2.6667, abs=1e-4)
        assert effective_sample_size([0.5, 0.25, 0.25]) == pytest.approx(1 / 0.375, rel=1e-14)


class TestResample:
    def test_uniform_weights_keep_each_once(self, rng):
        idx = systematic_indices(np.full(20, 0.05), rng)
        np.testing.assert_array_equal(np.sort(idx), np.arange(20))

    def test_one_hot(self, rng):
        w = np.zeros(10)
        w[7] = 1.0
        np.testing.assert_array_equal(systematic_indices(w, rng), 7)

    def test_counts_are_floor_or_ceil(self, rng):
        w = rng.dirichlet(np.ones(50))
        counts = np.bincount(systematic_indices(w, rng), minlength=50)
        assert np.all((counts == np.floor(50 * w)) | (counts == np.ceil(50 * w)))

    def test_uniform_weights_after(self, rng):
        ens = pf_init(np.zeros(2), np.eye(2), 30, rng)
        ens.log_weights = np.log(rng.dirichlet(np.ones(30)))
        out = resample(ens, rng)
        np.testing.assert_allclose(out.weights, 1 / 30, rtol=1e-12)
        assert out.n == 30

    def test_unbiased(self, rng):
        n, trials = 20, 10_000
        x = rng.normal(size=n)
        w = rng.dirichlet(np.ones(n))
        idx = systematic_indices(np.broadcast_to(w, (trials, n)), rng)
        means = x[idx].mean(axis=1)
        se = means.std(ddof=1) / math.sqrt(trials)
        assert abs(means.mean() - w @ x) <= 3 * se

    def test_batch_rows_independent(self, rng):
        w = np.array([[1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
        np.testing.assert_array_equal(systematic_indices(w, rng), [[0, 0, 0], [2, 2, 2]])


class TestPfStep:
    def test_prior_proposal_weights_are_likelihood(self, rng):
        model = lorenz_model(LorenzParams(), 0.01, Gaussian(0, 0.1), Laplace(0, 0.6))
        ens = pf_init(np.array([1.0, 2.0, 20.0]), np.eye(3), 200, rng)
        x = np.array([1.2, 2.5, 19.0])
        out = pf_step(ens, x, model, "prior", rng, resample_threshold=0.0)
        loglik = Laplace(0, 0.6).log_density(x - out.particles).sum(axis=1)
        expected = loglik - np.logaddexp.reduce(loglik)
        np.testing.assert_allclose(out.log_weights, expected, atol=1e-12)

    def test_deterministic_single_particle(self, rng):
        p = LorenzParams()
        model = lorenz_model(p, 0.01, PointMass(0.0), Gaussian(0, 0.8))
        z = np.array([[1.0, 2.0, 20.0]])
        ens = ParticleEnsemble(z, np.zeros(1))
        out = pf_step(ens, np.array([5.0, 5.0, 5.0]), model, "prior", rng)
        np.testing.assert_allclose(out.particles, model.f(z), rtol=1e-15)
        np.testing.assert_array_equal(out.log_weights, [0.0])

    def test_weights_normalised_every_step(self):
        xs = lorenz_data(200, 1)
        model = lorenz_model(LorenzParams(), 0.01, Gaussian(0, 0.1), Laplace(0, 0.8 / math.sqrt(2)))
        rng = np.random.default_rng(2)
        ens = pf_init(xs[0], 2 * np.eye(3), 300, rng, with_covs=True)
        for x in xs[1:]:
            ens = pf_step(ens, x, model, "ukf", rng)
            assert abs(ens.weights.sum() - 1.0) <= 1e-12
            # log-space weights: a zero weight always has log weight -inf
            assert np.all(np.isneginf(ens.log_weights[ens.weights == 0.0]))
            # low ESS always triggers a resample
            if ens.ess < 0.5 * ens.n:
                assert ens.resampled
                np.testing.assert_allclose(ens.weights, 1 / ens.n, rtol=1e-12)

    def test_extreme_likelihood_stays_finite(self, rng):
        model = lorenz_model(LorenzParams(), 0.01, Gaussian(0, 0.1), Gaussian(0, 0.01))
        ens = pf_init(np.array([1.0, 2.0, 20.0]), 4 * np.eye(3), 100, rng)
        out = pf_step(ens, np.array([1.0, 2.0, 20.0]), model, "prior", rng, resample_threshold=0.0)
        assert abs(out.weights.sum() - 1.0) <= 1e-12
        assert np.all(np.isneginf(out.log_weights[out.weights == 0.0]))

    def test_requires_rng(self):
        ens = pf_init(np.zeros(2), np.eye(2), 5, np.random.default_rng(0))
        with pytest.raises(ValueError):
            pf_step(ens, np.zeros(2), LINEAR, "prior", None)

    def test_ukf_proposal_needs_covs(self, rng):
        ens = pf_init(np.zeros(2), np.eye(2), 5, rng)
        with pytest.raises(ValueError):
            pf_step(ens, np.zeros(2), LINEAR, "ukf", rng)


def pf_vs_kalman(n, replicates, xs, seed):
    rng = np.random.default_rng(seed)
    m0, P0 = np.zeros(2), 2.0 * np.eye(2)
    ens = pf_init(np.broadcast_to(m0, (replicates, 2)), P0, n, rng)
    m, P = m0, P0
    errs = []
    for x in xs:
        ens = pf_step(ens, np.broadcast_to(x, (replicates, 2)), LINEAR, "prior", rng)
        m, P = kalman_step(m, P, x, A, np.eye(2), Q, R)
        errs.append(ens.mean() - m)
    return np.array(errs)  # (steps, replicates, 2)


class TestKalmanOracle:
    def test_matches_kalman_within_monte_carlo_error(self):
        xs = simulate_linear(50, np.random.default_rng(5))
        errs = pf_vs_kalman(10_000, 20, xs, 6)
        se = errs.std(axis=1, ddof=1) / math.sqrt(errs.shape[1])
        z = errs.mean(axis=1) / se
        assert np.sqrt(np.mean(z**2)) <= 3.0
        assert np.all(np.abs(z[-1]) <= 3.0)

    def test_error_shrinks_as_inverse_root_n(self):
        xs = simulate_linear(50, np.random.default_rng(7))
        ns = np.array([100, 1000, 10_000])
        rmse = [np.sqrt(np.mean(pf_vs_kalman(int(n), 20, xs, 8) ** 2)) for n in ns]
        slope = np.polyfit(np.log(ns), np.log(rmse), 1)[0]
        assert -0.65 <= slope <= -0.35, (slope, rmse)


class TestUkfProposal:
    def test_equals_kalman_step_per_particle(self, rng):
        ens = pf_init(np.array([0.5, -0.5]), np.eye(2), 8, rng, with_covs=True)
        ens.covs = np.stack([np.eye(2) * (0.1 + 0.05 * k) for k in range(8)])
        x = np.array([0.3, 0.1])
        means, covs, fz = ukf_proposal(ens, x, LINEAR, UtParams())
        for i in range(8):
            m, P = kalman_step(ens.particles[i], ens.covs[i], x, A, np.eye(2), Q, R)
            np.testing.assert_allclose(means[i], m, atol=1e-8)
            np.testing.assert_allclose(covs[i], P, atol=1e-8)
            np.testing.assert_allclose(fz[i], A @ ens.particles[i], atol=1e-15)

    def test_conditionally_optimal_from_point_particles(self, rng):
        # with no particle uncertainty the proposal is p(z_t | z_{t-1}, x_t)
        ens = pf_init(np.array([0.5, -0.5]), np.eye(2), 5, rng, with_covs=True)
        ens.covs = np.zeros((5, 2, 2))
        x = np.array([0.3, 0.1])
        means, covs, _ = ukf_proposal(ens, x, LINEAR, UtParams())
        S = np.linalg.inv(np.linalg.inv(Q) + np.linalg.inv(R))
        for i in range(5):
            opt = S @ (np.linalg.solve(Q, A @ ens.particles[i]) + np.linalg.solve(R, x))
            np.testing.assert_allclose(means[i], opt, atol=1e-8)
            np.testing.assert_allclose(covs[i], S, atol=1e-8)
            assert np.linalg.eigvalsh(covs[i]).min() > 0

    def test_infinite_obs_noise_gives_transition_mean(self, rng):
        model = lorenz_model(LorenzParams(), 0.01, Gaussian(0, 0.1), Gaussian(0, 1e8))
        ens = pf_init(np.array([1.0, 2.0, 20.0]), np.eye(3), 4, rng, with_covs=True)
        ens.covs = np.zeros((4, 3, 3))  # otherwise the predicted mean is E f(z), not f(z)
        means, _, fz = ukf_proposal(ens, np.array([9.0, 9.0, 9.0]), model, UtParams(), fast=False)
        np.testing.assert_allclose(means, fz, atol=1e-6)

    @pytest.mark.parametrize("batch", [(), (3,)])
    def test_compiled_kernel_matches_generic_path(self, batch):
        xs = lorenz_data(40, 3)
        model = lorenz_model(LorenzParams(9.0, 2.5, 27.0), 0.01, Gaussian(0, 0.1), Laplace(0, 0.5))
        runs = []
        for fast in (True, False):
            rng = np.random.default_rng(4)
            ens = pf_init(np.broadcast_to(xs[0], batch + (3,)), 2 * np.eye(3), 64, rng, with_covs=True)
            for x in xs[1:]:
                ens = pf_step(ens, np.broadcast_to(x, batch + (3,)), model, "ukf", rng, fast=fast)
            runs.append(ens)
        np.testing.assert_allclose(runs[0].particles, runs[1].particles, rtol=1e-8, atol=1e-8)
        np.testing.assert_allclose(runs[0].log_weights, runs[1].log_weights, rtol=1e-6, atol=1e-6)
