"""The five run modes: simulate, fit, envelope, edgefield, experiment.

Every command writes through one :class:`OutputCollector`, which owns the
output directory and the manifest listing all files written. Parallel work
(chains, posterior predictive simulations, experiment replicates) returns
results to the calling process; only the collector touches the disk.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np
from robot.api import logger

from .config import PlotSpec, RunConfig
from .edge_correction import (EdgeCorrectionMode, PlusSampling, PoissonCorrection, corrected_field,
                              expected_exterior_field, make_mode, realized_exterior_field)
from .errors import ConfigurationError, DataError
from .experiment import ERROR_COLUMNS, error_table, run_replicates, simulate_plot
from .geometry import PointPattern, Window, bin_points, discretize, read_pattern, write_pattern
from .gmrf import MaternParams
from .influence import InfluenceField, influence_field, write_field
from .likelihood import LgcpModel, ModelParams, ReplicateData, expected_intensity
from .mcmc import Chain, pool_chains, read_chain, run_chains, summarize, write_chain, write_summary
from .simulators import posterior_predictive, simulate_batch, simulation_rng
from .summaries import EnvelopeResult, default_r_grid, envelope_test, write_envelope
from .utils.textio import write_matrix, write_table

DEFAULT_INIT_SIGMA_Z = 1.0
DEFAULT_INIT_RHO_Z = 2.0


class OutputCollector:
    """Single writer for one command run."""

    def __init__(self, root: str | Path, echo: Mapping[str, Any] | None = None):
        self.root = Path(root)
        self.echo = dict(echo or {})
        self.entries: list[tuple[str, str, str]] = []

    def path(self, *parts: str) -> Path:
        p = self.root.joinpath(*parts)
        p.parent.mkdir(parents=True, exist_ok=True)
        return p

    def meta(self, **extra) -> dict:
        return {**self.echo, **extra}

    def add(self, kind: str, path: Path, plot: str = "") -> Path:
        self.entries.append((kind, plot, str(Path(path).relative_to(self.root))))
        logger.info(f"[OutputCollector] wrote {kind}: {path}")
        return path

    def files(self, kind: str) -> list[Path]:
        return [self.root / rel for k, _plot, rel in self.entries if k == kind]

    def write_manifest(self) -> Path:
        path = self.path("manifest.csv")
        write_table(path, ["kind", "plot", "path"], [list(e) for e in self.entries], self.meta())
        return path


# ---------------------------------------------------------------------------
# Loading plots
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class LoadedPlot:
    id: str
    parents: PointPattern
    children: PointPattern | None
    edge_mode: EdgeCorrectionMode
    extended_parents: PointPattern | None = None
    extended_window: Window | None = None


def load_plot(cfg: RunConfig, spec: PlotSpec, need_children: bool = True) -> LoadedPlot:
    missing = spec.missing_files()
    if missing:
        raise ConfigurationError(f"[load_plot] plot {spec.id}: file(s) not found: "
                                 f"{', '.join(str(m) for m in missing)}")
    parents = read_pattern(spec.parents, cfg.window)
    if spec.children is None and need_children:
        raise ConfigurationError(f"[load_plot] plot {spec.id} has no children file")
    children = read_pattern(spec.children, cfg.window) if spec.children is not None else None
    extended = None
    if spec.extended_parents is not None:
        if spec.extended_window is None:
            raise ConfigurationError(f"[load_plot] plot {spec.id}: extended_parents without extended_window")
        extended = read_pattern(spec.extended_parents, spec.extended_window)
    mode = make_mode(cfg.edge_mode, parents, intensity=cfg.parent_intensity, extended_parents=extended,
                     extended_window=spec.extended_window)
    logger.info(f"[load_plot] plot {spec.id}: {len(parents)} parents, "
                f"{len(children) if children is not None else 0} children, edge mode {mode.name}")
    return LoadedPlot(spec.id, parents, children, mode, extended, spec.extended_window)


def load_plots(cfg: RunConfig, need_children: bool = True) -> list[LoadedPlot]:
    cfg.check_plot_files()
    return [load_plot(cfg, spec, need_children) for spec in cfg.plots]


def loaded_from_simulation(cfg: RunConfig, plot_id: str, sim) -> LoadedPlot:
    """Session plot from a :class:`~coxfield.experiment.SimulatedPlot`."""
    ext_window = cfg.experiment.extended_window
    mode = make_mode(cfg.edge_mode, sim.parents, intensity=cfg.parent_intensity or cfg.experiment.parent_intensity,
                     extended_parents=sim.extended_parents, extended_window=ext_window)
    return LoadedPlot(str(plot_id), sim.parents, sim.children, mode, sim.extended_parents, ext_window)


def replicates_for(cfg: RunConfig, plots: list[LoadedPlot]) -> list[ReplicateData]:
    grid = discretize(cfg.window, cfg.cell_size)
    return [ReplicateData(p.id, bin_points(p.children, grid), p.parents, p.edge_mode, cfg.cutoff_sd) for p in plots]


def _init_beta0(cfg: RunConfig, plots: list[LoadedPlot], sigma: float) -> tuple[float, ...]:
    given = cfg.init.get("beta0")
    ids = [p.id for p in plots]
    if given is None:
        out = []
        for p in plots:
            n = len(p.children) if p.children is not None else 0
            out.append(math.log(max(n, 1) / cfg.window.area) - 0.5 * sigma ** 2)
        return tuple(out)
    if isinstance(given, Mapping):
        missing = [i for i in ids if i not in {str(k) for k in given}]
        if missing:
            raise ConfigurationError(f"[initial_params] init.beta0 lacks plot(s) {', '.join(missing)}")
        lookup = {str(k): float(v) for k, v in given.items()}
        return tuple(lookup[i] for i in ids)
    if isinstance(given, (list, tuple)):
        if len(given) != len(ids):
            raise ConfigurationError(f"[initial_params] init.beta0 has {len(given)} values for {len(ids)} plots")
        return tuple(float(v) for v in given)
    return tuple(float(given) for _ in ids)


def initial_params(cfg: RunConfig, plots: list[LoadedPlot]) -> ModelParams:
    """Start values: ``init`` entries, else the configured kernel and a moment guess for ``beta0``."""
    init = cfg.init
    sigma = float(init.get("sigmaZ", DEFAULT_INIT_SIGMA_Z))
    rho = float(init.get("rhoZ", DEFAULT_INIT_RHO_Z))
    kernel = cfg.kernel
    updates = {k: float(init[k]) for k in kernel.param_names if k in init}
    if updates:
        kernel = kernel.with_values(**updates)
    return ModelParams(_init_beta0(cfg, plots, sigma), float(init.get("beta1", 0.0)), kernel,
                       MaternParams.from_sd(sigma, rho), tuple(p.id for p in plots))


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def fit_chains(cfg: RunConfig, plots: list[LoadedPlot]) -> list[Chain]:
    """Run the configured chain(s) of the replicated model over *plots*."""
    model = LgcpModel(replicates_for(cfg, plots), cfg.priors)
    init = initial_params(cfg, plots)
    logger.info(f"[fit_chains] {len(plots)} plot(s), kernel {cfg.kernel.name}, edge mode {cfg.edge_mode}, "
                f"{cfg.chain.n_chains} chain(s) x {cfg.chain.n_iter} iterations")
    return run_chains(model, cfg.priors, init, cfg.chain, cfg.seed, n_jobs=cfg.n_jobs)


def write_fit(chains: list[Chain], collector: OutputCollector):
    for k, chain in enumerate(chains, start=1):
        name = "chain.csv" if len(chains) == 1 else f"chain_{k}.csv"
        collector.add("chain", write_chain(chain, collector.path("fit", name), collector.meta(chain_index=k)))
    if all(len(c) for c in chains):
        table = summarize(chains)
        collector.add("summary", write_summary(table, collector.path("fit", "summary.csv"),
                                               collector.meta(n_chains=len(chains))))
    else:
        logger.warn("[write_fit] no stored samples (n_iter <= burn_in); summary skipped")


def cmd_fit(cfg: RunConfig, collector: OutputCollector, plots: list[LoadedPlot] | None = None) -> list[Chain]:
    """Fit the replicated model over all configured plots."""
    chains = fit_chains(cfg, plots if plots is not None else load_plots(cfg))
    write_fit(chains, collector)
    return chains


def _chain_for_envelope(cfg: RunConfig, chain: Chain | Sequence[Chain] | None) -> Chain:
    if chain is not None:
        return pool_chains(chain)
    if cfg.envelope.chain:
        paths = [Path(cfg.envelope.chain)]
    else:
        fit_dir = cfg.output_dir / "fit"
        single = fit_dir / "chain.csv"
        paths = [single] if single.is_file() else sorted(fit_dir.glob("chain_[0-9]*.csv"),
                                                         key=lambda p: (len(p.stem), p.stem))
        if not paths:
            paths = [single]
    missing = [p for p in paths if not p.is_file()]
    if missing:
        raise ConfigurationError(f"[cmd_envelope] chain file not found: {missing[0]}")
    if len(paths) > 1:
        logger.info(f"[cmd_envelope] pooling {len(paths)} chains from {paths[0].parent}")
    return pool_chains([read_chain(p) for p in paths])


def plot_envelopes(cfg: RunConfig, chain: Chain, plot: LoadedPlot,
                   statistics: tuple[str, ...] | None = None) -> dict[tuple[str, str], EnvelopeResult]:
    """Posterior predictive ERL envelopes of one plot, keyed by ``(plot, statistic)``."""
    ids = list(chain.layout.plot_ids)
    if plot.id not in ids:
        raise DataError(f"[plot_envelopes] chain has no intercept for plot {plot.id} (plots {ids})")
    if plot.children is None:
        raise ConfigurationError(f"[plot_envelopes] plot {plot.id} has no children pattern")
    env = cfg.envelope
    k = ids.index(plot.id)
    r_grid = default_r_grid(env.r_max, env.r_step)
    sims = posterior_predictive(chain, plot.parents, cfg.window, env.n_sims, env.sim_cell_size, plot.edge_mode,
                                simulation_rng(cfg.seed, k), plot=k, cutoff_sd=cfg.cutoff_sd, n_jobs=cfg.n_jobs)
    results = {}
    for stat in statistics or env.statistics:
        stat = stat.upper()
        res = envelope_test(stat, plot.children, sims, r_grid, parents=plot.parents, level=env.level,
                            f_spacing=env.f_spacing, n_jobs=cfg.n_jobs)
        logger.info(f"[plot_envelopes] plot {plot.id} {stat}: {'pass' if res.passed else 'fail'} "
                    f"(data rank {res.data_rank} of {res.n_sims + 1})")
        results[(plot.id, stat)] = res
    return results


def write_envelopes(results: dict[tuple[str, str], EnvelopeResult], collector: OutputCollector):
    rows = []
    for (plot_id, stat), res in results.items():
        path = write_envelope(res, collector.path("envelope", f"{plot_id}_{stat}.csv"), collector.meta(plot=plot_id))
        collector.add("envelope", path, plot_id)
        rows.append([plot_id, stat, "pass" if res.passed else "fail", res.data_rank, res.n_sims, res.level])
    collector.add("envelope_results", write_table(collector.path("envelope", "results.csv"),
                                                  ["plot", "statistic", "result", "data_rank", "n_sims", "level"],
                                                  rows, collector.meta()))


def cmd_envelope(cfg: RunConfig, collector: OutputCollector,
                 chain: Chain | Sequence[Chain] | None = None, plots: list[LoadedPlot] | None = None,
                 statistics: tuple[str, ...] | None = None) -> dict[tuple[str, str], EnvelopeResult]:
    """Posterior predictive ERL envelopes per plot and statistic, drawn from the pooled chains."""
    plots = plots if plots is not None else load_plots(cfg)
    chain = _chain_for_envelope(cfg, chain)
    results: dict[tuple[str, str], EnvelopeResult] = {}
    for plot in plots:
        results.update(plot_envelopes(cfg, chain, plot, statistics))
    write_envelopes(results, collector)
    return results


@dataclass(frozen=True, eq=False)
class EdgeFields:
    observed: InfluenceField
    exterior: InfluenceField
    corrected: InfluenceField
    realized_exterior: InfluenceField | None
    intensities: dict[str, np.ndarray]
    params: ModelParams


def edge_fields(cfg: RunConfig, plot: LoadedPlot, params: ModelParams, k: int = 0) -> EdgeFields:
    grid = discretize(cfg.window, cfg.cell_size)
    kernel = params.kernel
    observed = influence_field(kernel, plot.parents, grid, cfg.cutoff_sd, edge_mode="none")
    poisson = plot.edge_mode if isinstance(plot.edge_mode, PoissonCorrection) else \
        PoissonCorrection.estimated(plot.parents, cfg.parent_intensity)
    exterior = expected_exterior_field(kernel, poisson.intensity, poisson.markdist, grid)
    corrected = observed.plus(exterior, "poisson")
    realized = None
    intensities = {"none": expected_intensity(params, observed, k), "poisson": expected_intensity(params, corrected, k)}
    if plot.extended_parents is not None:
        plus = PlusSampling(plot.extended_parents, plot.extended_window)
        realized = realized_exterior_field(kernel, plus, grid, cfg.cutoff_sd)
        intensities["plus"] = expected_intensity(params, corrected_field(kernel, plot.parents, grid, plus,
                                                                         cfg.cutoff_sd), k)
    return EdgeFields(observed, exterior, corrected, realized, intensities, params)


def write_edge_fields(plot_id: str, f: EdgeFields, collector: OutputCollector):
    for name, fld in (("observed", f.observed), ("exterior", f.exterior), ("corrected", f.corrected),
                      ("realized_exterior", f.realized_exterior)):
        if fld is None:
            continue
        collector.add(f"field_{name}", write_field(fld, collector.path("edgefield", f"{plot_id}_{name}.csv"),
                                                   collector.meta(plot=plot_id, field=name)), plot_id)
    for mode, values in f.intensities.items():
        path = write_matrix(collector.path("edgefield", f"{plot_id}_intensity_{mode}.csv"),
                            f.observed.grid.to_matrix(values),
                            collector.meta(plot=plot_id, field="expected_intensity", intensity_mode=mode,
                                           parameters=f.params.named_values()))
        collector.add("expected_intensity", path, plot_id)


def cmd_edgefield(cfg: RunConfig, collector: OutputCollector,
                  plots: list[LoadedPlot] | None = None) -> dict[str, EdgeFields]:
    """Observed, expected exterior and corrected influence matrices per plot."""
    plots = plots if plots is not None else load_plots(cfg, need_children=False)
    params = initial_params(cfg, plots)
    out = {}
    for k, plot in enumerate(plots):
        out[plot.id] = edge_fields(cfg, plot, params, k)
        write_edge_fields(plot.id, out[plot.id], collector)
    return out


def cmd_simulate(cfg: RunConfig, collector: OutputCollector) -> list[PointPattern]:
    """One parent pattern (window and extended window) and a batch of child patterns."""
    sim = cfg.simulate
    plot = simulate_plot(cfg, sim.process, sim.regime, sim.target_count, simulation_rng(cfg.seed, 0))
    truth = plot.truth.named_values()
    meta = collector.meta(process=sim.process, regime=sim.regime, truth=truth)
    collector.add("parents", write_pattern(plot.parents, collector.path("simulate", "parents.csv"), meta))
    collector.add("extended_parents", write_pattern(plot.extended_parents,
                                                    collector.path("simulate", "parents_extended.csv"), meta))
    mode = PlusSampling(plot.extended_parents, cfg.experiment.extended_window)
    batch = [plot.children]
    if sim.n_realisations > 1:
        batch += simulate_batch(plot.truth, plot.parents, cfg.window, sim.n_realisations - 1, cfg.seed + 1,
                                cfg.sim_cell_size, mode, cutoff_sd=cfg.cutoff_sd)
    width = len(str(len(batch)))
    for i, children in enumerate(batch, start=1):
        path = collector.path("simulate", f"children_{i:0{width}d}.csv")
        collector.add("children", write_pattern(children, path, {**meta, "realisation": i}))
    logger.info(f"[cmd_simulate] {len(plot.parents)} parents, child counts {[len(c) for c in batch]}")
    return batch


def cmd_experiment(cfg: RunConfig, collector: OutputCollector) -> list:
    """Full simulation study; replicate failures are logged and skipped."""
    outcomes = run_replicates(cfg)
    summary_rows = []
    for o in outcomes:
        for edge_mode, table in o.summaries.items():
            for name in table.names:
                row = table.rows[name]
                summary_rows.append([o.process, o.regime, o.index, edge_mode, name, o.truth.get(name, float("nan")),
                                     row["mean"], row["q05"], row["q25"], row["q50"], row["q75"], row["q95"],
                                     row["map"]])
    collector.add("replicate_summaries", write_table(
        collector.path("experiment", "replicate_summaries.csv"),
        ["process", "regime", "replicate", "edge_mode", "parameter", "truth", "mean", "q05", "q25", "q50", "q75",
         "q95", "map"], summary_rows, collector.meta()))
    rows = error_table(outcomes, cfg.experiment.edge_modes, cfg.experiment.estimator)
    collector.add("error_quantiles", write_table(collector.path("experiment", "error_quantiles.csv"),
                                                 list(ERROR_COLUMNS), rows,
                                                 collector.meta(estimator=cfg.experiment.estimator)))
    failures = [[o.process, o.regime, o.index, where, msg.replace(",", ";")]
                for o in outcomes for where, msg in o.errors.items()]
    collector.add("failures", write_table(collector.path("experiment", "failures.csv"),
                                          ["process", "regime", "replicate", "stage", "message"], failures,
                                          collector.meta()))
    return outcomes


COMMANDS = {
    "simulate": cmd_simulate,
    "fit": cmd_fit,
    "envelope": cmd_envelope,
    "edgefield": cmd_edgefield,
    "experiment": cmd_experiment,
}


def run_command(cfg: RunConfig) -> OutputCollector:
    """Run ``cfg.mode`` and write the manifest."""
    collector = OutputCollector(cfg.output_dir, cfg.echo())
    COMMANDS[cfg.mode](cfg, collector)
    collector.write_manifest()
    return collector
