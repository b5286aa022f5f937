import math

import numpy as np
import pytest
from scipy import stats

from chaoscast.experiment import SYSTEM_IDS, build_system
from chaoscast.noise import (
    Gaussian,
    Laplace,
    Mixture,
    PointMass,
    SignedExponential,
    Uniform,
    component_labels,
    log_density,
    noise_from_dict,
    noise_to_dict,
    sample,
)

N = 100_000

DS4 = Mixture((0.5, 0.5), (Gaussian(0.1, 0.25), Gaussian(-0.1, 0.5)))
DS6 = Mixture((0.5, 0.5), (SignedExponential(1.0, 0.25, 1), SignedExponential(1.0, 0.25, -1)))


def table2_specs():
    specs = []
    for sid in SYSTEM_IDS:
        sys_ = build_system(sid)
        specs.append((f"{sid}-obs", sys_.obs_noise))
        if sys_.stoch_noise is not None:
            specs.append((f"{sid}-stoch", sys_.stoch_noise))
    return specs


def breakpoints(spec):
    if isinstance(spec, Uniform):
        return [spec.a, spec.b]
    if isinstance(spec, SignedExponential):
        return [0.0]
    if isinstance(spec, Mixture):
        return [x for c in spec.components for x in breakpoints(c)]
    return []


def trapezoid_mass(spec, points=400_001):
    lo, hi = spec.support()
    grid = np.unique(np.concatenate([np.linspace(lo, hi, points), breakpoints(spec)]))
    return np.trapezoid(np.exp(spec.log_density(grid)), grid)


def sample_moment_check(spec, rng):
    """|sample mean - E| and |sample var - Var| within 3 standard errors."""
    x = spec.sample(rng, N)
    m, v = x.mean(), x.var(ddof=1)
    se_mean = math.sqrt(spec.variance() / N)
    m4 = np.mean((x - m) ** 4)
    se_var = math.sqrt(max(m4 - v**2, 0.0) / N)
    return abs(m - spec.expectation()) <= 3 * se_mean and abs(v - spec.variance()) <= 3 * se_var, (m, v)


class TestExamples:
    def test_point_mass_always_zero(self, rng):
        assert sample(PointMass(0.0), rng) == 0.0
        np.testing.assert_array_equal(PointMass(0.0).sample(rng, 100), 0.0)

    def test_ds4_moments(self, rng):
        assert DS4.expectation() == pytest.approx(0.0, abs=1e-15)
        assert DS4.variance() == pytest.approx(0.5 * (0.25**2 + 0.1**2) + 0.5 * (0.5**2 + 0.1**2), rel=1e-14)
        assert DS4.variance() == pytest.approx(0.16625, rel=1e-12)
        ok, got = sample_moment_check(DS4, rng)
        assert ok, got

    def test_ds6_moments(self, rng):
        assert DS6.variance() == pytest.approx(2 * 0.25**2, rel=1e-14)
        ok, got = sample_moment_check(DS6, rng)
        assert ok, got

    def test_uniform_density_at_centre(self):
        assert log_density(Uniform(-0.5, 0.5), 0.0) == 0.0

    def test_laplace_density_at_centre(self):
        assert float(Laplace(0.0, 0.25).log_density(0.0)) == pytest.approx(math.log(2.0), abs=1e-15)
        assert float(Laplace(0.0, 0.25).log_density(0.0)) == pytest.approx(0.693147, abs=1e-6)

    def test_gaussian_density_one_sd_out(self):
        expected = -math.log(0.8 * math.sqrt(2 * math.pi)) - 0.5
        assert float(Gaussian(0.0, 0.8).log_density(0.8)) == pytest.approx(expected, abs=1e-14)

    def test_outside_support_is_minus_inf(self):
        assert Uniform(-0.5, 0.5).log_density(0.6) == -np.inf
        assert SignedExponential(1.0, 0.25, 1).log_density(-0.1) == -np.inf
        assert PointMass(0.0).log_density(1e-300) == -np.inf


class TestValidation:
    @pytest.mark.parametrize(
        "make",
        [
            lambda: Gaussian(0.0, 0.0),
            lambda: Uniform(1.0, 1.0),
            lambda: Laplace(0.0, -1.0),
            lambda: SignedExponential(0.0, 1.0, 1),
            lambda: SignedExponential(1.0, 1.0, 0),
            lambda: Mixture((0.5, 0.6), (Gaussian(), Gaussian())),
            lambda: Mixture((1.5, -0.5), (Gaussian(), Gaussian())),
            lambda: Mixture((1.0,), (Gaussian(), Gaussian())),
        ],
    )
    def test_rejects_bad_parameters(self, make):
        with pytest.raises(ValueError):
            make()

    def test_weights_tolerance(self):
        Mixture((0.3, 0.7 + 5e-13), (Gaussian(), Gaussian()))
        with pytest.raises(ValueError):
            Mixture((0.3, 0.7 + 5e-12), (Gaussian(), Gaussian()))


class TestProperties:
    @pytest.mark.parametrize("name,spec", table2_specs(), ids=[n for n, _ in table2_specs()])
    def test_density_normalised(self, name, spec):
        assert abs(trapezoid_mass(spec) - 1.0) <= 1e-4

    @pytest.mark.parametrize("spec", [Gaussian(0.3, 0.8), Uniform(-0.5, 0.5), Laplace(0.1, 0.25)], ids=["gaussian", "uniform", "laplace"])
    def test_ks_against_analytic_cdf(self, spec, rng):
        x = spec.sample(rng, N)
        assert stats.kstest(x, spec.cdf).statistic <= 0.01

    def test_ds6_is_laplace_quarter(self, rng):
        a = DS6.sample(rng, N)
        b = Laplace(0.0, 0.25).sample(rng, N)
        assert stats.ks_2samp(a, b).pvalue > 0.01

    def test_ds6_log_density_equals_laplace(self):
        v = np.linspace(-3, 3, 1001)
        np.testing.assert_allclose(DS6.log_density(v), Laplace(0.0, 0.25).log_density(v), atol=1e-12)

    @pytest.mark.parametrize("spec", [DS4, build_system("DS5").obs_noise], ids=["DS4", "DS5"])
    def test_component_frequencies(self, spec, rng):
        labels = component_labels(spec, rng, N)
        for k, w in enumerate(spec.weights):
            se = math.sqrt(w * (1 - w) / N)
            assert abs(np.mean(labels == k) - w) <= 3 * se

    @pytest.mark.parametrize("name,spec", table2_specs(), ids=[n for n, _ in table2_specs()])
    def test_sample_moments(self, name, spec, rng):
        ok, got = sample_moment_check(spec, rng)
        assert ok, got

    def test_cdf_matches_integrated_density(self):
        spec = build_system("DS5").obs_noise
        grid = np.linspace(*spec.support(), 200_001)
        dens = np.exp(spec.log_density(grid))
        cum = np.concatenate([[0], np.cumsum(0.5 * (dens[1:] + dens[:-1]) * np.diff(grid))])
        np.testing.assert_allclose(spec.cdf(grid), cum, atol=1e-4)

    def test_scalar_and_array_sampling(self, rng):
        assert isinstance(Gaussian().sample(rng), float)
        assert isinstance(DS4.sample(rng), float)
        assert DS4.sample(rng, (4, 3)).shape == (4, 3)


class TestRecords:
    @pytest.mark.parametrize("name,spec", table2_specs() + [("laplace", Laplace(0, 1)), ("pm", PointMass(2.0))])
    def test_round_trip(self, name, spec):
        assert noise_from_dict(noise_to_dict(spec)) == spec

    def test_none(self):
        assert noise_from_dict({"type": "none"}) is None
        assert noise_from_dict(None) is None
        assert noise_to_dict(None) == {"type": "none"}

    def test_tagged_record(self):
        assert noise_from_dict({"type": "gaussian", "mean": 0.0, "sd": 0.80}) == Gaussian(0.0, 0.8)

    def test_unknown_type(self):
        with pytest.raises(ValueError):
            noise_from_dict({"type": "cauchy"})
