"""Tests fuer Summary-Funktionen und ERL-Huellkurven."""

import math

import numpy as np
import pytest

from coxfield.errors import ConfigurationError, DataError
from coxfield.geometry import PointPattern, Window
from coxfield.simulators import sample_poisson, simulation_rng
from coxfield.summaries import (SummaryCurve, compute_statistic, cross_l12, default_r_grid, empty_space_f,
                                envelope_test, erl_envelope, extreme_rank_order, kaplan_meier_cdf, l_function,
                                nn_distance_g, write_envelope)
from coxfield.utils.textio import read_table

R = np.array([0.0, 1.0, 2.0, 3.0, 4.0])


def _pair(window10):
    return PointPattern(np.array([[2.0, 5.0], [5.0, 5.0]]), window10)


def _flat_curves(values, r=R[:3]):
    return [SummaryCurve("L", r, np.full(r.shape, v)) for v in values]


class TestRadiusGrid:
    def test_default_grid(self):
        r = default_r_grid()
        assert r.shape == (101,)
        assert r[0] == 0.0
        assert r[-1] == pytest.approx(5.0)

    def test_invalid(self):
        with pytest.raises(ConfigurationError):
            default_r_grid(0.0)

    def test_decreasing_grid_rejected(self, window10):
        with pytest.raises(ConfigurationError):
            l_function(_pair(window10), [0.0, 2.0, 1.0])


class TestLFunction:
    def test_two_points(self, window10):
        curve = l_function(_pair(window10), R)
        # one pair at distance 3, translation area 7 * 10
        k = 100.0 ** 2 / 2 * (2.0 / 70.0)
        expected = np.where(R >= 3.0, math.sqrt(k / math.pi), 0.0) - R
        np.testing.assert_allclose(curve.values, expected, atol=1e-12)
        assert curve.estimator == "translate"

    def test_needs_two_points(self, window10):
        with pytest.raises(DataError):
            l_function(PointPattern(np.array([[1.0, 1.0]]), window10), R)

    @pytest.mark.slow
    def test_centred_near_zero_for_csr(self):
        window = Window(0, 20, 0, 20)
        curves = [l_function(sample_poisson(0.25, window, simulation_rng(8, i)), R).values for i in range(300)]
        np.testing.assert_allclose(np.mean(curves, axis=0)[1:], 0.0, atol=0.1)


class TestCrossL12:
    def test_single_pair(self, window10):
        parents = PointPattern(np.array([[2.0, 5.0]]), window10)
        children = PointPattern(np.array([[5.0, 5.0]]), window10)
        k = 100.0 ** 2 / 70.0
        expected = np.where(R >= 3.0, math.sqrt(k / math.pi), 0.0) - R
        np.testing.assert_allclose(cross_l12(parents, children, R).values, expected, atol=1e-12)

    def test_symmetric(self, rng, window10):
        a = PointPattern(rng.uniform(0, 10, (8, 2)), window10)
        b = PointPattern(rng.uniform(0, 10, (12, 2)), window10)
        np.testing.assert_allclose(cross_l12(a, b, R).values, cross_l12(b, a, R).values, atol=1e-12)

    def test_empty_pattern(self, window10, parents10):
        with pytest.raises(DataError):
            cross_l12(parents10, PointPattern.empty(window10), R)

    def test_different_windows(self, parents10):
        other = PointPattern(np.array([[1.0, 1.0]]), Window(0, 20, 0, 20))
        with pytest.raises(ConfigurationError):
            cross_l12(parents10, other, R)


class TestKaplanMeier:
    def test_uncensored_is_empirical_cdf(self):
        f = kaplan_meier_cdf(np.array([1.0, 2.0, 3.0, 4.0]), np.full(4, np.inf), np.array([0.0, 1.0, 2.5, 4.0]))
        np.testing.assert_allclose(f, [0.0, 0.25, 0.5, 1.0])

    def test_censored_observation_leaves_risk_set(self):
        f = kaplan_meier_cdf(np.array([1.0, 3.0, 2.0]), np.array([10.0, 2.5, 10.0]), np.array([1.5, 2.0]))
        np.testing.assert_allclose(f, [1 / 3, 2 / 3])

    def test_empty_space_bounds(self, parents10):
        r = default_r_grid(3.0, 0.1)
        f = empty_space_f(parents10, r)
        assert f.values[0] == 0.0
        assert np.all(np.diff(f.values) >= 0)
        assert np.all(f.values <= 1.0)
        assert f.settings == {"f_spacing": 0.25}

    def test_nearest_neighbour_step(self):
        window = Window(0, 100, 0, 100)
        p = PointPattern(np.array([[50.0, 50.0], [53.0, 50.0]]), window)
        g = nn_distance_g(p, R)
        np.testing.assert_array_equal(g.values, [0.0, 0.0, 0.0, 1.0, 1.0])

    @pytest.mark.parametrize("estimator", [empty_space_f, nn_distance_g])
    def test_poisson_patterns_follow_closed_form(self, estimator):
        window = Window(0, 40, 0, 40)
        r = default_r_grid(1.0, 0.1)
        curves = [estimator(sample_poisson(0.5, window, simulation_rng(5, i)), r).values for i in range(4)]
        np.testing.assert_allclose(np.mean(curves, axis=0), 1.0 - np.exp(-0.5 * math.pi * r ** 2), atol=0.04)

    def test_empty_pattern(self, window10):
        with pytest.raises(DataError):
            empty_space_f(PointPattern.empty(window10), R)


class TestComputeStatistic:
    def test_case_insensitive(self, parents10, marked_parents10):
        assert compute_statistic("l12", parents10, R, parents=marked_parents10).statistic == "L12"

    def test_l12_needs_parents(self, parents10):
        with pytest.raises(ConfigurationError):
            compute_statistic("L12", parents10, R)

    def test_unknown(self, parents10):
        with pytest.raises(ConfigurationError, match="unknown statistic"):
            compute_statistic("J", parents10, R)

    def test_non_finite_curve(self):
        with pytest.raises(ConfigurationError):
            SummaryCurve("L", [0.0, 1.0], [0.0, math.nan])


class TestExtremeRank:
    def test_order(self):
        curves = np.array([[10.0], [1.0], [5.0], [6.0], [3.0]])
        # two-sided extreme ranks 1, 1, 3, 2, 2; ties broken by index
        assert extreme_rank_order(curves).tolist() == [0, 1, 3, 4, 2]

    def test_repeated_extremes_rank_first(self):
        curves = np.array([[9.0, 9.0], [1.0, 2.0], [2.0, 1.0], [3.0, 8.0]])
        order = extreme_rank_order(curves).tolist()
        assert order[0] == 0
        assert order[-1] == 3


class TestErlEnvelope:
    def test_minimum_simulations(self):
        data = _flat_curves([0.5])[0]
        with pytest.raises(ConfigurationError, match="at least 99"):
            erl_envelope(data, _flat_curves(np.arange(98) / 100))

    def test_level_range(self):
        with pytest.raises(ConfigurationError):
            erl_envelope(_flat_curves([0.5])[0], _flat_curves(np.arange(99) / 100), level=1.0)

    def test_grid_mismatch(self):
        sims = _flat_curves(np.arange(99) / 100)
        data = SummaryCurve("L", [0.0, 1.0, 2.5], [0.5, 0.5, 0.5])
        with pytest.raises(ConfigurationError, match="r grids"):
            erl_envelope(data, sims)

    def test_inside_data_passes(self):
        res = erl_envelope(_flat_curves([0.495])[0], _flat_curves(np.arange(99) / 100))
        assert res.passed
        assert res.lower[0] == pytest.approx(0.03)
        assert res.upper[0] == pytest.approx(0.96)
        assert res.central[0] == pytest.approx(0.495)
        assert res.outside.size == 0

    def test_outlying_data_fails_with_rank_one(self):
        res = erl_envelope(_flat_curves([5.0])[0], _flat_curves(np.arange(99) / 100))
        assert not res.passed
        assert res.data_rank == 1
        np.testing.assert_array_equal(res.outside, R[:3])

    def test_kept_data_on_lower_bound_passes(self):
        rng = np.random.default_rng(31)
        r = R[:4]
        sims = rng.standard_normal((99, 4))
        data = np.median(sims, axis=0)
        data[0] = sims[:, 0].min() - 1e-3
        res = erl_envelope(SummaryCurve("L", r, data), [SummaryCurve("L", r, s) for s in sims])
        # extreme at r = 0 only, so several simulated curves rank ahead of it
        assert res.data_rank > 5
        assert res.lower[0] == data[0]
        assert res.passed
        assert res.outside.size == 0

    def test_invariant_under_monotone_transform(self):
        rng = np.random.default_rng(32)
        r = R[:4]
        sims = rng.standard_normal((199, 4))
        data = rng.standard_normal(4)
        plain = erl_envelope(SummaryCurve("L", r, data), [SummaryCurve("L", r, s) for s in sims])
        warped = erl_envelope(SummaryCurve("L", r, np.exp(data)), [SummaryCurve("L", r, np.exp(s)) for s in sims])
        assert warped.data_rank == plain.data_rank
        assert warped.passed == plain.passed
        np.testing.assert_allclose(warped.lower, np.exp(plain.lower))
        np.testing.assert_allclose(warped.upper, np.exp(plain.upper))
        np.testing.assert_allclose(warped.central, np.exp(plain.central))

    @pytest.mark.slow
    def test_rejection_rate_under_the_simulated_model(self):
        window = Window(0, 10, 0, 10)
        r = default_r_grid(2.5, 0.25)[1:]
        rejected = 0
        for trial in range(500):
            patterns = [sample_poisson(1.0, window, simulation_rng(trial, i)) for i in range(1000)]
            curves = [l_function(p, r) for p in patterns]
            rejected += not erl_envelope(curves[0], curves[1:]).passed
        assert 0.03 <= rejected / 500 <= 0.08

    def test_envelope_test_on_poisson_patterns(self):
        window = Window(0, 20, 0, 20)
        data = sample_poisson(0.25, window, simulation_rng(2, 999))
        sims = [sample_poisson(0.25, window, simulation_rng(2, i)) for i in range(99)]
        res = envelope_test("G", data, sims, default_r_grid(2.0, 0.1))
        assert res.n_sims == 99
        assert res.statistic == "G"
        assert 1 <= res.data_rank <= 100

    def test_written_envelope(self, tmp_path):
        res = erl_envelope(_flat_curves([0.495])[0], _flat_curves(np.arange(99) / 100))
        meta, columns, data = read_table(write_envelope(res, tmp_path / "env.csv", {"plot": "1"}))
        assert columns == ["r", "lo", "central", "hi", "data"]
        assert meta["result"] == "pass"
        assert meta["n_sims"] == "99"
        assert meta["plot"] == "1"
        assert data.shape == (3, 5)
