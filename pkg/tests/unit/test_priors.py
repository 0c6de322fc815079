"""Tests fuer priors.py."""

import math

import pytest
from scipy import integrate, stats

from coxfield.errors import ConfigurationError
from coxfield.priors import Exponential, Flat, Gamma, Normal, PriorSpec, log_prior, prior_from_config


class TestPriorFamilies:
    def test_normal(self):
        assert Normal(0.0, 10.0).logpdf(3.0) == pytest.approx(stats.norm.logpdf(3.0, scale=10.0))

    def test_gamma_outside_support(self):
        assert Gamma().logpdf(0.0) == -math.inf
        assert Gamma().logpdf(-1.0) == -math.inf

    def test_exponential_mean(self):
        assert Exponential(mean=2.0).logpdf(0.0) == pytest.approx(-math.log(2.0))

    def test_flat_positive(self):
        assert Flat().logpdf(-5.0) == 0.0
        assert Flat(positive=True).logpdf(-5.0) == -math.inf

    def test_invalid_scale(self):
        with pytest.raises(ConfigurationError):
            Normal(0.0, 0.0)
        with pytest.raises(ConfigurationError):
            Gamma(shape=-1.0)


class TestPriorConfig:
    def test_from_mapping(self):
        spec = PriorSpec.from_mapping({"theta": {"family": "exponential", "mean": 5}})
        assert spec.theta == Exponential(5.0)
        assert spec.beta1 == Normal()

    def test_unknown_key(self):
        with pytest.raises(ConfigurationError, match="unknown prior key"):
            PriorSpec.from_mapping({"gamma": {"family": "normal"}})

    def test_unknown_family(self):
        with pytest.raises(ConfigurationError, match="unknown prior family"):
            prior_from_config({"family": "cauchy"})

    def test_bad_parameter(self):
        with pytest.raises(ConfigurationError):
            prior_from_config({"family": "normal", "scale": 2})

    def test_intercepts_share_prior(self):
        spec = PriorSpec()
        assert spec.for_parameter("beta0_north") is spec.beta0

    def test_unknown_parameter(self):
        with pytest.raises(ConfigurationError):
            PriorSpec().for_parameter("kappa")


class TestLogPrior:
    def test_sum_of_terms(self):
        values = {"beta0_1": -1.0, "beta1": -0.7, "theta": 2.1, "sigmaZ": 1.6, "rhoZ": 2.6}
        spec = PriorSpec()
        expected = (2 * 0.0 + stats.norm.logpdf(-1.0, scale=10) + stats.norm.logpdf(-0.7, scale=10)
                    + stats.gamma.logpdf(2.1, 2.4, scale=1.8) + stats.expon.logpdf(1.6, scale=10)
                    + stats.gamma.logpdf(2.6, 2.4, scale=1.8))
        assert log_prior(values, spec) == pytest.approx(expected)

    def test_outside_support(self):
        assert log_prior({"theta": -1.0, "beta1": 0.0}, PriorSpec()) == -math.inf

    def test_flat_spec_is_zero(self):
        assert log_prior({"beta0_1": 3.0, "theta": 2.0}, PriorSpec.flat()) == 0.0

    def test_negative_field_sd(self):
        assert log_prior({"sigmaZ": -1.0, "rhoZ": 2.6}, PriorSpec()) == -math.inf

    def test_beta1_zero_term(self):
        assert log_prior({"beta1": 0.0}, PriorSpec()) == pytest.approx(math.log(1.0 / (10.0 * math.sqrt(2 * math.pi))))


def test_default_range_prior_mass_between_1_and_10():
    theta = PriorSpec().theta
    mass, _ = integrate.quad(lambda x: math.exp(theta.logpdf(x)), 1.0, 10.0)
    assert mass == pytest.approx(0.90, abs=0.01)
