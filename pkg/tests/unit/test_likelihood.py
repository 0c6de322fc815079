"""Tests fuer die Laplace-Likelihood und die Replikat-Verwaltung."""

import math

import numpy as np
import pytest
import scipy.sparse as sp
from scipy import integrate, optimize, stats
from scipy.special import gammaln

from coxfield.edge_correction import NoCorrection
from coxfield.errors import ConfigurationError, DataError, StaleFieldError
from coxfield.geometry import CountGrid, PointPattern, Window, bin_points, discretize
from coxfield.gmrf import MaternParams, PrecisionOperator, build_precision
from coxfield.kernels.influence_kernel import GaussianKernel, NoInfluence
from coxfield.likelihood import (LgcpModel, ModelParams, ReplicateData, cell_log_intensity, expected_intensity,
                                 find_mode, laplace_approximation, laplace_loglik, log_posterior, offsets,
                                 replicated_loglik)
from coxfield.priors import PriorSpec, log_prior

FIELD = MaternParams.from_sd(1.6, 2.6)


def _params(n=1, kernel=None, beta0=-1.0):
    return ModelParams(tuple([beta0] * n), -0.7, kernel or GaussianKernel(theta=2.1), FIELD)


def _replicate(grid, parents, counts=None, plot_id="1"):
    counts = np.zeros(grid.G, dtype=int) if counts is None else counts
    return ReplicateData(plot_id, CountGrid(grid, counts), parents, NoCorrection())


def _single_cell_log_joint(n, eta, sigma):
    return lambda z: n * (eta + z) - math.exp(eta + z) - 0.5 * z * z / sigma ** 2


def _single_cell_mode(n, eta, sigma):
    h = _single_cell_log_joint(n, eta, sigma)
    return optimize.minimize_scalar(lambda z: -h(z), method="brent", options={"xtol": 1e-12}).x


def _exact_single_cell(n, eta, sigma):
    """Poisson-lognormal marginal by adaptive quadrature around the mode."""
    h = _single_cell_log_joint(n, eta, sigma)
    mode = _single_cell_mode(n, eta, sigma)
    width = 1.0 / math.sqrt(math.exp(eta + mode) + 1.0 / sigma ** 2)
    value, _ = integrate.quad(lambda z: math.exp(h(z) - h(mode)), mode - 12 * width, mode + 12 * width,
                              epsabs=0, epsrel=1e-12, limit=200)
    return h(mode) + math.log(value) - gammaln(n + 1) - 0.5 * math.log(2 * math.pi * sigma ** 2)


def _laplace_single_cell(n, eta, sigma):
    h = _single_cell_log_joint(n, eta, sigma)
    mode = _single_cell_mode(n, eta, sigma)
    curvature = math.exp(eta + mode) + 1.0 / sigma ** 2
    return h(mode) - gammaln(n + 1) - 0.5 * math.log(sigma ** 2 * curvature)


class TestModelParams:
    def test_named_values(self):
        p = ModelParams((-1.0, -2.0), -0.7, GaussianKernel(theta=2.1), FIELD, plot_ids=("A", "B"))
        assert p.named_values() == {"beta0_A": -1.0, "beta0_B": -2.0, "beta1": -0.7, "theta": 2.1,
                                    "sigmaZ": pytest.approx(1.6), "rhoZ": 2.6}

    def test_no_influence_drops_beta1(self):
        p = ModelParams((-1.0,), 0.0, NoInfluence(), FIELD)
        assert "beta1" not in p.named_values()
        assert not p.has_influence

    def test_default_ids(self):
        assert _params(3).ids == ("1", "2", "3")

    def test_id_count_mismatch(self):
        with pytest.raises(ConfigurationError):
            ModelParams((-1.0,), 0.0, NoInfluence(), FIELD, plot_ids=("A", "B"))

    def test_non_finite(self):
        with pytest.raises(ConfigurationError):
            ModelParams((math.nan,), 0.0, NoInfluence(), FIELD)


class TestLaplace:
    @pytest.mark.parametrize("sigma", [0.3, 1.6])
    @pytest.mark.parametrize("n", [0, 3, 20])
    def test_single_cell_matches_laplace_formula(self, n, sigma):
        Q = PrecisionOperator(sp.csc_matrix(np.array([[1.0 / sigma ** 2]])))
        approx = laplace_loglik(np.array([n]), np.zeros(1), Q)
        assert approx == pytest.approx(_laplace_single_cell(n, 0.0, sigma), abs=1e-7)

    @pytest.mark.parametrize("sigma", [0.3, 1.6])
    @pytest.mark.parametrize("n", [0, 3, 20])
    def test_single_cell_against_quadrature(self, n, sigma):
        Q = PrecisionOperator(sp.csc_matrix(np.array([[1.0 / sigma ** 2]])))
        approx = laplace_loglik(np.array([n]), np.zeros(1), Q)
        assert approx == pytest.approx(_exact_single_cell(n, 0.0, sigma), abs=0.02)

    def test_two_by_two_against_monte_carlo(self):
        centres = np.array([[0.5, 0.5], [1.5, 0.5], [0.5, 1.5], [1.5, 1.5]])
        dist = np.linalg.norm(centres[:, None, :] - centres[None, :, :], axis=-1)
        cov = 0.09 * np.exp(-dist / 2.0)
        counts = np.array([12, 8, 15, 10])
        eta = np.full(4, math.log(10.0))
        approx = laplace_loglik(counts, eta, PrecisionOperator(sp.csc_matrix(np.linalg.inv(cov))))

        z = np.random.default_rng(41).multivariate_normal(np.zeros(4), cov, size=40000)
        loglik = stats.poisson.logpmf(counts, np.exp(eta + z)).sum(axis=1)
        top = loglik.max()
        w = np.exp(loglik - top)
        estimate = top + math.log(w.mean())
        se = w.std(ddof=1) / (w.mean() * math.sqrt(w.size))
        assert abs(approx - estimate) < 3 * se

    def test_mode_is_stationary(self, grid10, rng):
        Q = build_precision(grid10, FIELD)
        counts = rng.poisson(2.0, grid10.G)
        eta = np.full(grid10.G, math.log(2.0))
        res = find_mode(counts, eta, Q)
        assert res.converged
        assert res.newton_iters < 20
        grad = -(Q.matrix @ res.z_full)
        grad[Q.interior] += counts - np.exp(eta + res.z_hat)
        assert np.max(np.abs(grad)) < 1e-8

    def test_zero_counts_push_field_down(self, grid10):
        Q = build_precision(grid10, FIELD)
        res = find_mode(np.zeros(grid10.G), np.zeros(grid10.G), Q)
        assert np.all(res.z_hat < 0)

    def test_warm_start_reaches_same_value(self, grid10, rng):
        Q = build_precision(grid10, FIELD)
        counts = rng.poisson(1.0, grid10.G)
        eta = np.zeros(grid10.G)
        cold = find_mode(counts, eta, Q)
        warm = find_mode(counts, eta, Q, z0=cold.z_full)
        assert warm.newton_iters == 0
        assert warm.log_marginal == pytest.approx(cold.log_marginal, abs=1e-9)

    def test_overflow_gives_minus_infinity(self, grid10):
        Q = build_precision(grid10, FIELD, pad_cells=0)
        res = laplace_approximation(np.ones(grid10.G), np.full(grid10.G, 1000.0), Q)
        assert res.failed
        assert res.log_marginal == -math.inf

    def test_shape_mismatch(self, grid10):
        Q = build_precision(grid10, FIELD, pad_cells=0)
        with pytest.raises(ConfigurationError):
            find_mode(np.zeros(5), np.zeros(5), Q)


class TestReplicateData:
    def test_field_before_refresh(self, grid10, parents10):
        rep = _replicate(grid10, parents10)
        with pytest.raises(StaleFieldError):
            rep.field_for(GaussianKernel(theta=2.1))

    def test_stale_kernel(self, grid10, parents10):
        rep = _replicate(grid10, parents10)
        rep.refresh(GaussianKernel(theta=2.1))
        with pytest.raises(StaleFieldError):
            rep.field_for(GaussianKernel(theta=3.0))

    def test_refresh_is_cached(self, grid10, parents10):
        rep = _replicate(grid10, parents10)
        first = rep.refresh(GaussianKernel(theta=2.1))
        assert rep.refresh(GaussianKernel(theta=2.1)) is first

    def test_offsets(self, grid10, parents10):
        rep = _replicate(grid10, parents10)
        fld = rep.refresh(GaussianKernel(theta=2.1))
        eta = offsets(_params(), rep, 0)
        np.testing.assert_allclose(eta, -1.0 - 0.7 * fld.values)

    def test_cell_log_intensity_adds_field(self, grid10, parents10):
        rep = _replicate(grid10, parents10)
        fld = rep.refresh(GaussianKernel(theta=2.1))
        assert cell_log_intensity(_params(), rep, 0, 13, 0.5) == pytest.approx(-0.5 - 0.7 * fld.values[13])
        cells = np.array([0, 13])
        np.testing.assert_allclose(cell_log_intensity(_params(), rep, 0, cells, np.zeros(2)),
                                   offsets(_params(), rep, 0)[cells])


class TestReplicatedLoglik:
    def test_beta1_gradient_matches_finite_differences(self, rng):
        window = Window(0.0, 5.0, 0.0, 5.0)
        grid = discretize(window, 1.0)
        parents = PointPattern(np.array([[1.2, 1.4], [3.9, 2.6]]), window)
        counts = rng.poisson(1.5, grid.G)
        rep = _replicate(grid, parents, counts)
        params = _params()
        rep.refresh(params.kernel)

        def loglik(beta1):
            return replicated_loglik(params.with_values(beta1=beta1), [rep], warm_start=False)

        step = 1e-5
        numeric = (loglik(params.beta1 + step) - loglik(params.beta1 - step)) / (2 * step)

        # envelope term plus the log-determinant term with the mode moving along
        Q = build_precision(grid, FIELD)
        idx = Q.interior
        c = rep.field_for(params.kernel).values
        eta = offsets(params, rep, 0)
        z = laplace_approximation(counts, eta, Q).z_full
        mu = np.exp(eta + z[idx])
        hessian = Q.matrix.toarray()
        hessian[idx, idx] += mu
        h_inv = np.linalg.inv(hessian)
        pull = np.zeros(Q.n)
        pull[idx] = mu * c
        dz = -h_inv @ pull
        dmu = mu * (c + dz[idx])
        analytic = float(c @ (counts - mu)) - 0.5 * float(np.sum(h_inv[idx, idx] * dmu))
        assert numeric == pytest.approx(analytic, rel=1e-4, abs=1e-6)

    def test_sum_over_replicates(self, grid10, parents10, rng):
        params = _params(2)
        reps = [_replicate(grid10, parents10, rng.poisson(0.5, grid10.G), plot_id=str(i)) for i in (1, 2)]
        for rep in reps:
            rep.refresh(params.kernel)
        Q = build_precision(grid10, FIELD)
        expected = sum(laplace_loglik(r.counts.counts, offsets(params, r, k), Q) for k, r in enumerate(reps))
        assert replicated_loglik(params, reps, warm_start=False) == pytest.approx(expected, abs=1e-9)

    def test_intercept_count(self, grid10, parents10):
        with pytest.raises(ConfigurationError):
            replicated_loglik(_params(2), [_replicate(grid10, parents10)])

    def test_log_posterior_adds_prior(self, grid10, parents10):
        params = _params()
        rep = _replicate(grid10, parents10, bin_points(parents10, grid10).counts)
        flat = log_posterior(params, [rep], PriorSpec.flat(), warm_start=False)
        rep.reset()
        informative = log_posterior(params, [rep], PriorSpec(), warm_start=False)
        assert informative - flat == pytest.approx(log_prior(params, PriorSpec()), abs=1e-9)


class TestLgcpModel:
    def test_needs_replicates(self):
        with pytest.raises(DataError):
            LgcpModel([])

    def test_diagnostics_count_evaluations(self, grid10, parents10):
        model = LgcpModel([_replicate(grid10, parents10)], PriorSpec.flat())
        model.log_posterior(_params())
        model.log_posterior(_params(beta0=-1.5))
        assert model.diagnostics.evaluations == 2
        model.reset()
        assert model.diagnostics.evaluations == 0

    def test_plot_ids(self, grid10, parents10):
        model = LgcpModel([_replicate(grid10, parents10, plot_id="north")])
        assert model.plot_ids == ("north",)


def test_expected_intensity(grid10, parents10):
    rep = _replicate(grid10, parents10)
    fld = rep.refresh(GaussianKernel(theta=2.1))
    lam = expected_intensity(_params(), fld)
    np.testing.assert_allclose(lam, np.exp(-1.0 - 0.7 * fld.values + 0.5 * 1.6 ** 2))
