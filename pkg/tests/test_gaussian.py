"""Moment arithmetic: frozen examples, sampling oracles, and properties."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gmprop import (
    Activation,
    ConfigError,
    GaussianVector,
    IDENTITY,
    gaussian_product_moments,
    linear_combination_moments,
    linearize_activation,
    mixture_reduce,
)

finite_mean = st.floats(-50, 50, allow_nan=False)
finite_var = st.floats(0, 100, allow_nan=False)


def mc_se_mean(x):
    return x.std(ddof=1) / math.sqrt(x.size)


def mc_se_var(x):
    d = x - x.mean()
    m2 = np.mean(d * d)
    m4 = np.mean(d ** 4)
    return math.sqrt(max(m4 - m2 * m2, 0.0) / x.size)


class TestProductMoments:
    def test_zero_mean_unit_variance(self):
        out = gaussian_product_moments(GaussianVector(0.0, 1.0),
                                       GaussianVector(0.0, 1.0))
        assert out.mean == 0.0
        assert out.variance == 1.0

    def test_deterministic_degenerate(self):
        out = gaussian_product_moments(GaussianVector(2.0, 0.0),
                                       GaussianVector(3.0, 0.0))
        assert out.mean == 6.0
        assert out.variance == 0.0

    def test_monte_carlo_oracle(self):
        """(1, 0.5) x (-2, 0.25) against a 10^7-sample estimate, 3 SE."""
        rng = np.random.default_rng(11)
        n = 10_000_000
        x = rng.normal(1.0, math.sqrt(0.5), n)
        y = rng.normal(-2.0, math.sqrt(0.25), n)
        z = x * y
        out = gaussian_product_moments(GaussianVector(1.0, 0.5),
                                       GaussianVector(-2.0, 0.25))
        assert abs(out.mean - z.mean()) <= 3 * mc_se_mean(z)
        assert abs(out.variance - z.var(ddof=1)) <= 3 * mc_se_var(z)

    def test_rejects_non_finite(self):
        with pytest.raises(ValueError):
            gaussian_product_moments(GaussianVector(np.inf, 1.0),
                                     GaussianVector(0.0, 1.0))

    @given(finite_mean, finite_var, finite_mean, finite_var)
    @settings(max_examples=200, deadline=None)
    def test_symmetric_and_nonnegative(self, mx, vx, my, vy):
        a = gaussian_product_moments(GaussianVector(mx, vx), GaussianVector(my, vy))
        b = gaussian_product_moments(GaussianVector(my, vy), GaussianVector(mx, vx))
        assert a.mean == b.mean
        # the three variance terms accumulate in a different order
        assert a.variance == pytest.approx(b.variance, rel=1e-12)
        assert a.variance >= 0


class TestLinearize:
    def test_relu_inactive(self):
        lin = linearize_activation(GaussianVector(-1.0, 4.0), Activation("relu"))
        assert lin.out_mean == 0.0 and lin.out_variance == 0.0 and lin.jacobian == 0.0

    def test_relu_active_is_identity(self):
        lin = linearize_activation(GaussianVector(3.0, 2.0), Activation("relu"))
        assert lin.out_mean == 3.0 and lin.out_variance == 2.0 and lin.jacobian == 1.0

    def test_tanh_high_precision(self):
        """Slope and value checked against an independent evaluation."""
        import mpmath

        lin = linearize_activation(GaussianVector(0.5, 0.1), Activation("tanh"))
        val = float(mpmath.tanh(mpmath.mpf("0.5")))
        der = float(1 - mpmath.tanh(mpmath.mpf("0.5")) ** 2)
        assert lin.out_mean == pytest.approx(val, abs=1e-12)
        assert lin.jacobian == pytest.approx(der, abs=1e-12)
        assert lin.out_variance == pytest.approx(der * der * 0.1, abs=1e-12)

    def test_identity_passthrough(self):
        z = GaussianVector(np.array([0.3, -2.0]), np.array([1.0, 0.5]))
        lin = linearize_activation(z, IDENTITY)
        assert np.array_equal(lin.out_mean, z.mean)
        assert np.array_equal(lin.out_variance, z.variance)
        assert np.array_equal(lin.jacobian, np.ones(2))

    def test_unknown_kind_is_config_error(self):
        with pytest.raises(ConfigError):
            Activation("swish")

    @given(st.sampled_from(["relu", "lrelu", "tanh", "sigmoid", "identity"]),
           finite_mean, finite_var)
    @settings(max_examples=200, deadline=None)
    def test_variance_nonnegative(self, name, mu, var):
        lin = linearize_activation(GaussianVector(mu, var), Activation(name))
        assert lin.out_variance >= 0
        assert lin.out_variance == pytest.approx(lin.jacobian ** 2 * var, rel=1e-12)


class TestMixtureReduce:
    def test_identical_components(self):
        units = GaussianVector(np.zeros(5), np.ones(5))
        stats = mixture_reduce(units)
        assert stats.mu == 0.0 and stats.sigma == 1.0

    def test_pure_between_component_spread(self):
        stats = mixture_reduce(GaussianVector(np.array([0.0, 2.0]), np.zeros(2)))
        assert stats.mu == 1.0 and stats.sigma == 1.0

    def test_pooled_sampling_oracle(self):
        """Three components vs a 10^7-sample pooled draw, 3 SE."""
        mu = np.array([1.0, 3.0, -1.0])
        var = np.array([0.5, 2.0, 1.0])
        stats = mixture_reduce(GaussianVector(mu, var))
        rng = np.random.default_rng(3)
        n = 10_000_000
        comp = rng.integers(0, 3, n)
        z = rng.normal(mu[comp], np.sqrt(var[comp]))
        assert abs(stats.mu - z.mean()) <= 3 * mc_se_mean(z)
        se_sigma = mc_se_var(z) / (2 * stats.sigma)
        assert abs(stats.sigma - z.std(ddof=1)) <= 3 * se_sigma

    def test_copies_return_component(self):
        rng = np.random.default_rng(0)
        for _ in range(25):
            m, v = rng.uniform(-3, 3), rng.uniform(0.01, 4)
            n = rng.integers(1, 9)
            stats = mixture_reduce(GaussianVector(np.full(n, m), np.full(n, v)))
            assert stats.mu == pytest.approx(m, rel=1e-12)
            assert stats.sigma == pytest.approx(math.sqrt(v), rel=1e-12)

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            mixture_reduce(GaussianVector(np.zeros(0), np.zeros(0)))


class TestLinearCombination:
    def test_identity(self):
        out = linear_combination_moments(np.array([1.0]),
                                         GaussianVector(np.array([5.0]), np.array([2.0])),
                                         GaussianVector(0.0, 0.0))
        assert out.mean == 5.0 and out.variance == 2.0

    def test_two_element_average(self):
        out = linear_combination_moments(
            np.array([0.5, 0.5]),
            GaussianVector(np.array([2.0, 4.0]), np.array([1.0, 1.0])),
            GaussianVector(0.0, 0.0))
        assert out.mean == 3.0 and out.variance == 0.5

    def test_random_eight_element_oracle(self):
        rng = np.random.default_rng(8)
        coeffs = rng.uniform(-2, 2, 8)
        mu = rng.uniform(-2, 2, 8)
        var = rng.uniform(0, 3, 8)
        mb, vb = 0.4, 0.2
        out = linear_combination_moments(coeffs, GaussianVector(mu, var),
                                         GaussianVector(mb, vb))
        n = 2_000_000
        u = rng.normal(mu, np.sqrt(var), (n, 8))
        z = u @ coeffs + rng.normal(mb, math.sqrt(vb), n)
        assert abs(out.mean - z.mean()) <= 3 * mc_se_mean(z)
        assert abs(out.variance - z.var(ddof=1)) <= 3 * mc_se_var(z)

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            linear_combination_moments(np.ones(3),
                                       GaussianVector(np.zeros(2), np.zeros(2)),
                                       GaussianVector(0.0, 0.0))


class TestGaussianVector:
    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValueError):
            GaussianVector(np.zeros(3), np.zeros(4))

    def test_negative_variance_rejected(self):
        with pytest.raises(ValueError):
            GaussianVector(np.zeros(2), np.array([0.1, -0.1]))
