"""Simulation study: parent process x regime x edge mode.

For every replicate a parent pattern is drawn on the extended window, the
children are generated with all parents acting (the plus-sampling truth)
and the model is then fitted once per edge mode, starting at the true
values. The study reports, per parameter, the quantiles of the
posterior estimate minus the truth over the replicates.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import TYPE_CHECKING

import numpy as np
from joblib import Parallel, delayed
from robot.api import logger

from .edge_correction import PlusSampling, corrected_field, make_mode
from .errors import CoxFieldError
from .geometry import PointPattern, bin_points, discretize
from .gmrf import MaternParams
from .kernels.influence_kernel import GaussianKernel
from .likelihood import LgcpModel, ModelParams, ReplicateData
from .mcmc import QUANTILES, Chain, SummaryTable, chain_seeds, run_chain, summarize
from .simulators import sample_lgcp, sample_parents, simulation_rng, tune_intercept

if TYPE_CHECKING:  # pragma: no cover
    from .config import RunConfig

# numeric failures inside one replicate; the study goes on without it
REPLICATE_FAILURES = (CoxFieldError, ArithmeticError, ValueError, RuntimeError, MemoryError)
SIGMA_Z = 1.6
RHO_Z = 2.6


@dataclass(frozen=True)
class Regime:
    beta1: float
    theta: float


REGIMES = {
    "estimated": Regime(beta1=-0.7, theta=2.1),
    "strong": Regime(beta1=-3.0, theta=2.1),
    "wide": Regime(beta1=-0.7, theta=6.0),
}

ERROR_COLUMNS = ("process", "regime", "edge_mode", "parameter", "n", "q05", "q25", "q50", "q75", "q95")


@dataclass(frozen=True, eq=False)
class SimulatedPlot:
    truth: ModelParams
    parents: PointPattern
    extended_parents: PointPattern
    children: PointPattern


def regime_params(regime: str, beta0: float = 0.0, plot_id: str = "1") -> ModelParams:
    r = REGIMES[regime]
    return ModelParams((beta0,), r.beta1, GaussianKernel(theta=r.theta), MaternParams.from_sd(SIGMA_Z, RHO_Z),
                       (plot_id,))


def simulate_plot(cfg: "RunConfig", process: str, regime: str, target_count: float,
                  rng: np.random.Generator) -> SimulatedPlot:
    """Parents on the extended window, children on the window with ``beta0`` tuned to *target_count*."""
    exp = cfg.experiment
    ext_window = exp.extended_window
    extended = sample_parents(process, ext_window, rng, intensity=exp.parent_intensity, strauss=exp.strauss)
    observed = extended.restricted(cfg.window)
    mode = PlusSampling(extended, ext_window)
    params = regime_params(regime)
    fine = discretize(cfg.window, cfg.sim_cell_size)
    fld = corrected_field(params.kernel, observed, fine, mode, cfg.cutoff_sd)
    beta0 = tune_intercept(target_count, params.beta1, params.matern.sigma2, fld)
    truth = params.with_values(beta0=(beta0,))
    children = sample_lgcp(truth, observed, cfg.window, cfg.sim_cell_size, mode, rng, cutoff_sd=cfg.cutoff_sd)
    return SimulatedPlot(truth, observed, extended, children)


def fit_plot(cfg: "RunConfig", plot: SimulatedPlot, edge_mode: str, seed: int) -> Chain:
    grid = discretize(cfg.window, cfg.cell_size)
    mode = make_mode(edge_mode, plot.parents, intensity=cfg.parent_intensity or cfg.experiment.parent_intensity,
                     extended_parents=plot.extended_parents, extended_window=cfg.experiment.extended_window)
    rep = ReplicateData("1", bin_points(plot.children, grid), plot.parents, mode, cfg.cutoff_sd)
    model = LgcpModel([rep], cfg.priors)
    return run_chain(model, None, plot.truth, cfg.chain, seed, label=f"edge mode {edge_mode}")


@dataclass
class ReplicateOutcome:
    process: str
    regime: str
    index: int
    truth: dict[str, float] = field(default_factory=dict)
    n_children: int = 0
    n_parents: int = 0
    summaries: dict[str, SummaryTable] = field(default_factory=dict)
    chains: dict[str, Chain] = field(default_factory=dict)
    errors: dict[str, str] = field(default_factory=dict)


def run_replicate(cfg: "RunConfig", process: str, regime: str, index: int, seed: int) -> ReplicateOutcome:
    """Simulate one plot and fit it under every configured edge mode.

    Failures are recorded per edge mode; they never propagate.
    """
    outcome = ReplicateOutcome(process, regime, index)
    try:
        plot = simulate_plot(cfg, process, regime, cfg.experiment.target_count, simulation_rng(seed, 0))
    except REPLICATE_FAILURES as e:
        outcome.errors["simulate"] = _describe(e)
        logger.warn(f"[run_replicate] {process}/{regime} #{index}: simulation failed: "
                    f"{outcome.errors['simulate']}")
        return outcome
    outcome.truth = plot.truth.named_values()
    outcome.n_children = len(plot.children)
    outcome.n_parents = len(plot.parents)
    fit_seeds = chain_seeds(seed, len(cfg.experiment.edge_modes) + 1)[1:]
    for edge_mode, fit_seed in zip(cfg.experiment.edge_modes, fit_seeds):
        try:
            chain = fit_plot(cfg, plot, edge_mode, fit_seed)
            outcome.chains[edge_mode] = chain
            if len(chain):
                outcome.summaries[edge_mode] = summarize(chain)
        except REPLICATE_FAILURES as e:
            outcome.errors[edge_mode] = _describe(e)
            logger.warn(f"[run_replicate] {process}/{regime} #{index}: {edge_mode} fit failed: "
                        f"{outcome.errors[edge_mode]}")
    return outcome


def _describe(error: BaseException) -> str:
    if isinstance(error, CoxFieldError):
        return str(error)
    return f"{type(error).__name__}: {error}"


def replicate_tasks(cfg: "RunConfig") -> list[tuple[str, str, int, int]]:
    """``(process, regime, index, seed)`` for every replicate, in a fixed order."""
    exp = cfg.experiment
    cells = [(p, r) for p in exp.processes for r in exp.regimes]
    n = len(cells) * exp.replicates
    seeds = chain_seeds(cfg.seed, n) if n > 1 else [cfg.seed]
    tasks = []
    k = 0
    for process, regime in cells:
        for i in range(exp.replicates):
            tasks.append((process, regime, i + 1, seeds[k]))
            k += 1
    return tasks


def run_replicates(cfg: "RunConfig") -> list[ReplicateOutcome]:
    tasks = replicate_tasks(cfg)
    logger.info(f"[run_replicates] {len(tasks)} replicates x {len(cfg.experiment.edge_modes)} edge modes")
    jobs = (delayed(run_replicate)(cfg, *task) for task in tasks)
    outcomes = list(Parallel(n_jobs=cfg.n_jobs)(jobs))
    for o in outcomes:
        for where, message in o.errors.items():
            logger.error(f"[run_replicates] {o.process}/{o.regime} replicate {o.index} ({where}): {message}")
    return outcomes


def estimate(table: SummaryTable, name: str, estimator: str) -> float:
    return table.value(name, "map" if estimator == "map" else "mean")


def error_table(outcomes: list[ReplicateOutcome], edge_modes, estimator: str = "mean") -> list[list]:
    """Rows of :data:`ERROR_COLUMNS`: quantiles of estimate minus truth per parameter."""
    rows = []
    keys = sorted({(o.process, o.regime) for o in outcomes}, key=lambda k: (k[0], list(REGIMES).index(k[1])))
    for process, regime in keys:
        group = [o for o in outcomes if o.process == process and o.regime == regime]
        for edge_mode in edge_modes:
            fitted = [o for o in group if edge_mode in o.summaries]
            if not fitted:
                continue
            names = fitted[0].summaries[edge_mode].names
            for name in names:
                pname = "beta0" if name.startswith("beta0") else name
                diffs = np.array([estimate(o.summaries[edge_mode], name, estimator) - o.truth[name] for o in fitted])
                q = np.quantile(diffs, QUANTILES, method="linear")
                rows.append([process, regime, edge_mode, pname, len(diffs), *map(float, q)])
    return rows


def median_abs_gap(outcomes: list[ReplicateOutcome], regime: str, parameter: str, mode_a: str, mode_b: str,
                   estimator: str = "mean") -> float:
    """Median over replicates of ``|estimate(mode_a) - estimate(mode_b)|``."""
    gaps = [abs(estimate(o.summaries[mode_a], parameter, estimator) - estimate(o.summaries[mode_b], parameter, estimator))
            for o in outcomes if o.regime == regime and mode_a in o.summaries and mode_b in o.summaries]
    return float(np.median(gaps)) if gaps else float("nan")
