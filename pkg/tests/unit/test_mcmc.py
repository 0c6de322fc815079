"""Tests fuer den adaptiven Metropolis-Sampler, Ketten und Zusammenfassungen."""

import math

import numpy as np
import pytest

from coxfield.edge_correction import NoCorrection
from coxfield.errors import ConfigurationError, DataError
from coxfield.geometry import PointPattern, Window, bin_points, discretize
from coxfield.gmrf import MaternParams
from coxfield.kernels.influence_kernel import GaussianKernel, NoInfluence
from coxfield.likelihood import LgcpModel, ModelParams, ReplicateData
from coxfield.mcmc import (Chain, ChainSettings, ParameterLayout, RamState, chain_seeds, chol_rank_one,
                           effective_sample_size, pool_chains, ram_adapt, ram_step, read_chain, run_chain,
                           run_chains, run_sampler, summarize, write_chain)


def _std_normal(x):
    return -0.5 * float(np.dot(x, x))


def _chain(samples, logpost, names=("beta0_1", "sigmaZ", "rhoZ")):
    layout = ParameterLayout(("1",), NoInfluence)
    assert layout.names == names
    return Chain(layout, np.asarray(samples, dtype=float), np.asarray(logpost, dtype=float), accepted=3,
                 settings=ChainSettings(n_iter=10, burn_in=0, thin=1), seed=5)


class TestCholRankOne:
    def test_update(self, rng):
        a = rng.standard_normal((4, 4))
        L = np.linalg.cholesky(a @ a.T + 4 * np.eye(4))
        v = rng.standard_normal(4)
        np.testing.assert_allclose(chol_rank_one(L, v, 1.0), np.linalg.cholesky(L @ L.T + np.outer(v, v)),
                                   atol=1e-10)

    def test_downdate(self, rng):
        L = np.linalg.cholesky(np.diag([4.0, 5.0, 6.0]) + 0.5)
        v = 0.3 * rng.standard_normal(3)
        np.testing.assert_allclose(chol_rank_one(L, v, -1.0), np.linalg.cholesky(L @ L.T - np.outer(v, v)),
                                   atol=1e-12)

    def test_indefinite_downdate(self):
        with pytest.raises(FloatingPointError):
            chol_rank_one(np.eye(2), np.array([2.0, 0.0]), -1.0)

    def test_input_unchanged(self):
        L = np.eye(2)
        chol_rank_one(L, np.array([1.0, 1.0]), 1.0)
        np.testing.assert_array_equal(L, np.eye(2))


class TestRamAdapt:
    def test_target_covariance(self, rng):
        S = np.linalg.cholesky(np.array([[2.0, 0.3], [0.3, 1.0]]))
        u = rng.standard_normal(2)
        coef = 0.4
        out = ram_adapt(S, u, coef)
        expected = S @ (np.eye(2) + coef * np.outer(u, u) / (u @ u)) @ S.T
        np.testing.assert_allclose(out @ out.T, expected, atol=1e-12)
        assert np.allclose(out, np.tril(out))

    def test_zero_coefficient(self):
        S = np.eye(2)
        assert ram_adapt(S, np.array([1.0, 0.0]), 0.0) is S

    def test_failed_downdate_keeps_proposal(self):
        S = np.eye(2)
        assert ram_adapt(S, np.array([1.0, 0.0]), -1.5) is S


class TestRamStep:
    def test_rejects_impossible_proposal(self, rng):
        state = RamState.initial(np.zeros(2), 0.0, 1.0)
        new, accepted = ram_step(state, lambda x: -math.inf, rng)
        assert not accepted
        np.testing.assert_array_equal(new.x, state.x)
        assert new.n == 1

    def test_frozen_adaptation(self, rng):
        state = RamState.initial(np.zeros(2), 0.0, 0.5, adapt=False)
        for _ in range(20):
            state, _ = ram_step(state, _std_normal, rng)
        np.testing.assert_array_equal(state.S, 0.5 * np.eye(2))

    def test_initial_scale_must_be_positive(self):
        with pytest.raises(ConfigurationError):
            RamState.initial(np.zeros(2), 0.0, 0.0)

    def test_acceptance_settles_near_target(self):
        settings = ChainSettings(n_iter=8000, burn_in=0, thin=1)
        run = run_sampler(_std_normal, np.zeros(2), settings, seed=11)
        assert run.acceptance_rate == pytest.approx(0.234, abs=0.06)

    @pytest.mark.slow
    def test_standard_normal_moments(self):
        settings = ChainSettings(n_iter=60000, burn_in=10000, thin=5)
        run = run_sampler(_std_normal, np.full(2, 3.0), settings, seed=12)
        np.testing.assert_allclose(run.samples.mean(axis=0), 0.0, atol=0.1)
        np.testing.assert_allclose(run.samples.var(axis=0), 1.0, atol=0.15)


class TestStorage:
    def test_stored_count(self):
        settings = ChainSettings(n_iter=100, burn_in=20, thin=10)
        run = run_sampler(_std_normal, np.zeros(1), settings, seed=1)
        assert settings.n_stored == 8
        assert run.samples.shape == (8, 1)
        assert run.log_target.shape == (8,)

    def test_burn_in_equal_to_iterations(self):
        run = run_sampler(_std_normal, np.zeros(1), ChainSettings(n_iter=50, burn_in=50, thin=1), seed=1)
        assert run.samples.shape == (0, 1)

    def test_stores_states_at_thinning_points(self):
        seen = []

        def target(x):
            seen.append(float(x[0]))
            return 0.0

        run = run_sampler(target, np.zeros(1), ChainSettings(n_iter=6, burn_in=2, thin=2), seed=3)
        # flat target accepts every proposal; seen[0] is the start point
        assert run.samples[:, 0].tolist() == [seen[4], seen[6]]

    def test_same_seed_same_samples(self):
        s = ChainSettings(n_iter=200, burn_in=50, thin=5)
        a = run_sampler(_std_normal, np.zeros(2), s, seed=9)
        b = run_sampler(_std_normal, np.zeros(2), s, seed=9)
        np.testing.assert_array_equal(a.samples, b.samples)


class TestChainSettings:
    def test_burn_in_exceeds(self):
        with pytest.raises(ConfigurationError):
            ChainSettings(n_iter=10, burn_in=20)

    def test_gamma_range(self):
        with pytest.raises(ConfigurationError):
            ChainSettings(gamma=0.5)

    def test_from_mapping(self):
        s = ChainSettings.from_mapping({"n_iter": "3000", "burn_in": 1000, "thin": 2, "seed": 7, "adapt": 0})
        assert (s.n_iter, s.burn_in, s.thin, s.adapt) == (3000, 1000, 2, False)

    def test_from_mapping_unknown(self):
        with pytest.raises(ConfigurationError, match="unknown key"):
            ChainSettings.from_mapping({"iterations": 5})


class TestEffectiveSampleSize:
    def test_iid(self, rng):
        x = rng.standard_normal(5000)
        assert 0.8 * 5000 < effective_sample_size(x) < 1.25 * 5000

    def test_ar1(self, rng):
        phi = 0.9
        x = np.empty(20000)
        x[0] = rng.standard_normal()
        for t in range(1, x.shape[0]):
            x[t] = phi * x[t - 1] + rng.standard_normal()
        expected = x.shape[0] * (1 - phi) / (1 + phi)
        assert effective_sample_size(x) == pytest.approx(expected, rel=0.3)

    def test_constant_and_short(self):
        assert effective_sample_size(np.ones(100)) == 100.0
        assert effective_sample_size(np.array([1.0, 2.0])) == 2.0


class TestChainSeeds:
    def test_single_chain_uses_seed(self):
        assert chain_seeds(42, 1) == [42]

    def test_spawned_seeds(self):
        seeds = chain_seeds(42, 3)
        assert len(set(seeds)) == 3
        assert seeds == chain_seeds(42, 3)


class TestParameterLayout:
    def test_names_with_influence(self):
        layout = ParameterLayout(("A", "B"), GaussianKernel)
        assert layout.names == ("beta0_A", "beta0_B", "beta1", "theta", "sigmaZ", "rhoZ")
        assert layout.log_scale.tolist() == [False, False, False, True, True, True]

    def test_unconstrained_values(self):
        p = ModelParams((-1.0,), -0.7, GaussianKernel(theta=2.1), MaternParams.from_sd(1.6, 2.6), ("1",))
        layout = ParameterLayout.from_params(p)
        u = layout.to_unconstrained(p)
        np.testing.assert_allclose(u, [-1.0, -0.7, math.log(2.1), math.log(1.6), math.log(2.6)])
        assert layout.log_jacobian(u) == pytest.approx(math.log(2.1 * 1.6 * 2.6))
        back = layout.params_from_unconstrained(u)
        assert back.kernel.params["theta"] == pytest.approx(2.1)

    def test_without_influence(self):
        assert ParameterLayout(("1",), NoInfluence).names == ("beta0_1", "sigmaZ", "rhoZ")


class TestSummaries:
    def test_summary_columns(self):
        samples = [[0.0, 1.0, 2.0], [1.0, 2.0, 3.0], [2.0, 3.0, 4.0], [3.0, 4.0, 5.0], [4.0, 5.0, 6.0]]
        table = summarize(_chain(samples, [-5.0, -1.0, -3.0, -4.0, -2.0]))
        row = table.rows["beta0_1"]
        assert row["mean"] == 2.0
        assert row["q05"] == pytest.approx(0.2)
        assert row["q25"] == 1.0
        assert row["q50"] == 2.0
        assert row["q95"] == pytest.approx(3.8)
        assert row["map"] == 1.0
        assert table.value("rhoZ", "map") == 3.0

    def test_pooled_chains(self):
        a = _chain([[0.0, 1.0, 1.0]], [-1.0])
        b = _chain([[2.0, 1.0, 1.0]], [-0.5])
        table = summarize([a, b])
        assert table.value("beta0_1") == 1.0
        assert table.value("beta0_1", "map") == 2.0

    def test_empty(self):
        with pytest.raises(DataError):
            summarize(_chain(np.zeros((0, 3)), np.zeros(0)))

    def test_unknown_entry(self):
        table = summarize(_chain([[0.0, 1.0, 1.0]], [-1.0]))
        with pytest.raises(ConfigurationError):
            table.value("beta1")

    def test_unknown_column(self):
        with pytest.raises(ConfigurationError, match="no parameter"):
            _chain([[0.0, 1.0, 1.0]], [-1.0]).column("theta")


class TestPoolChains:
    def test_samples_stacked_in_order(self):
        a = _chain([[0.0, 1.0, 1.0], [1.0, 1.0, 1.0]], [-1.0, -2.0])
        b = _chain([[2.0, 1.0, 1.0]], [-0.5])
        b.newton_failures = 2
        pooled = pool_chains([a, b])
        assert pooled.samples[:, 0].tolist() == [0.0, 1.0, 2.0]
        assert pooled.logpost.tolist() == [-1.0, -2.0, -0.5]
        assert pooled.accepted == 6
        assert pooled.newton_failures == 2
        assert pooled.settings.n_iter == 20
        assert pooled.settings.n_chains == 2
        assert pooled.acceptance_rate == pytest.approx(0.3)

    def test_ess_adds_up(self):
        a = _chain([[0.0, 1.0, 1.0]], [-1.0])
        b = _chain([[2.0, 1.0, 1.0]], [-0.5])
        a.ess = {"beta0_1": 10.0, "sigmaZ": 4.0, "rhoZ": 2.0}
        b.ess = {"beta0_1": 5.0, "sigmaZ": 1.0, "rhoZ": 3.0}
        assert pool_chains([a, b]).ess == {"beta0_1": 15.0, "sigmaZ": 5.0, "rhoZ": 5.0}

    def test_single_chain_unchanged(self):
        a = _chain([[0.0, 1.0, 1.0]], [-1.0])
        assert pool_chains(a) is a
        assert pool_chains([a]) is a

    def test_different_models(self):
        a = _chain([[0.0, 1.0, 1.0]], [-1.0])
        layout = ParameterLayout(("2",), NoInfluence)
        b = Chain(layout, np.zeros((1, 3)), np.zeros(1), accepted=1,
                  settings=ChainSettings(n_iter=10, burn_in=0, thin=1), seed=5)
        with pytest.raises(DataError, match="different"):
            pool_chains([a, b])

    def test_empty(self):
        with pytest.raises(DataError, match="no chains"):
            pool_chains([])


class TestChainFiles:
    def test_written_chain_is_exact(self, tmp_path, rng):
        chain = _chain(rng.standard_normal((6, 3)), rng.standard_normal(6))
        chain.ess = {"beta0_1": 5.5}
        path = write_chain(chain, tmp_path / "chain.csv")
        text = path.read_text(encoding="utf-8")
        assert "# kernel_class: coxfield.kernels.influence_kernel.NoInfluence" in text
        assert "beta0_1,sigmaZ,rhoZ,logpost" in text
        back = read_chain(path)
        np.testing.assert_array_equal(back.samples, chain.samples)
        assert back.settings == chain.settings
        assert back.ess == {"beta0_1": 5.5}

    def test_column_mismatch(self, tmp_path, rng):
        path = write_chain(_chain(rng.standard_normal((2, 3)), np.zeros(2)), tmp_path / "chain.csv")
        path.write_text(path.read_text(encoding="utf-8").replace("sigmaZ,rhoZ", "rhoZ,sigmaZ"), encoding="utf-8")
        with pytest.raises(DataError, match="columns"):
            read_chain(path)

    def test_missing_metadata(self, tmp_path):
        path = tmp_path / "chain.csv"
        path.write_text("beta0_1,sigmaZ,rhoZ,logpost\n1,1,1,0\n", encoding="utf-8")
        with pytest.raises(DataError, match="metadata"):
            read_chain(path)


class TestRunChain:
    @pytest.fixture
    def model(self):
        window = Window(0, 5, 0, 5)
        grid = discretize(window, 1.0)
        parents = PointPattern(np.array([[1.0, 1.0], [3.5, 4.0]]), window)
        children = PointPattern(np.array([[0.5, 0.5], [2.2, 3.1], [4.4, 1.3], [1.7, 1.2]]), window)
        rep = ReplicateData("1", bin_points(children, grid), parents, NoCorrection())
        return LgcpModel([rep])

    @pytest.fixture
    def init(self):
        return ModelParams((-1.5,), -0.5, GaussianKernel(theta=2.0), MaternParams.from_sd(1.0, 2.0))

    def test_deterministic(self, model, init):
        s = ChainSettings(n_iter=30, burn_in=10, thin=5)
        a = run_chain(model, None, init, s, seed=21)
        b = run_chain(model, None, init, s, seed=21)
        assert len(a) == 4
        np.testing.assert_array_equal(a.samples, b.samples)
        assert a.meta == {"kernel": "gaussian", "edge_mode": "none"}
        assert set(a.ess) == set(a.names)

    def test_intercept_count_must_match_plots(self, model, init):
        with pytest.raises(ConfigurationError, match="intercepts"):
            run_chain(model, None, init.with_values(beta0=(-1.5, -1.0)), ChainSettings(n_iter=5, burn_in=0, thin=1),
                      seed=1)

    def test_two_chains_use_different_seeds(self, model, init):
        chains = run_chains(model, None, init, ChainSettings(n_iter=10, burn_in=0, thin=1, n_chains=2), seed=4)
        assert [c.seed for c in chains] == chain_seeds(4, 2)
