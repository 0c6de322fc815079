"""Run configuration.

A run is described by one YAML document (see ``configs/*.yaml`` for the
bundled presets). :meth:`RunConfig.from_mapping` validates every key and
rejects unknown ones; :func:`load_run_config` resolves a name or path with
:func:`coxfield.utils.yaml_loader.load_yaml_with_fallback` and applies the
command-line and environment overrides.
"""
from __future__ import annotations

import math
import os
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Mapping

from robot.api import logger

from .errors import ConfigurationError
from .geometry import Window
from .kernels.influence_kernel import GaussianKernel, InfluenceKernel, kernel_from_config
from .mcmc import ChainSettings
from .priors import PriorSpec
from .simulators import DEFAULT_MH_PROPOSALS, StraussParams
from .summaries import DEFAULT_F_SPACING, DEFAULT_R_MAX, DEFAULT_R_STEP, STATISTICS
from .utils.yaml_loader import load_yaml_with_fallback

MODES = ("simulate", "fit", "envelope", "edgefield", "experiment")
EDGE_MODES = ("none", "poisson", "plus")
PROCESSES = ("poisson", "strauss")
OUTPUT_DIR_ENV = "COXFIELD_OUTPUT_DIR"
DEFAULT_OUTPUT_DIR = "coxfield-out"
DEFAULT_SEED = 1

_TOP_LEVEL_KEYS = {
    "mode", "window", "cell_size", "sim_cell_size", "kernel", "edge_mode", "parent_intensity", "priors",
    "chain", "init", "plots", "envelope", "experiment", "simulate", "output_dir", "n_jobs", "cutoff_sd",
}


def _check_keys(section: str, mapping: Mapping, allowed: set[str]):
    if not isinstance(mapping, Mapping):
        raise ConfigurationError(f"[RunConfig] '{section}' must be a mapping, got {type(mapping).__name__}")
    unknown = sorted(set(mapping) - allowed)
    if unknown:
        raise ConfigurationError(f"[RunConfig] unknown key(s) in '{section}': {', '.join(map(str, unknown))}")


def _positive(section: str, value, allow_zero: bool = False) -> float:
    try:
        v = float(value)
    except (TypeError, ValueError):
        raise ConfigurationError(f"[RunConfig] '{section}' must be a number, got {value!r}") from None
    ok = v >= 0 if allow_zero else v > 0
    if not (ok and math.isfinite(v)):
        raise ConfigurationError(f"[RunConfig] '{section}' must be {'>= 0' if allow_zero else '> 0'}, got {value!r}")
    return v


def _window(section: str, value) -> Window:
    try:
        return Window.from_sequence(value)
    except (TypeError, ValueError) as e:
        raise ConfigurationError(f"[RunConfig] '{section}': {e}") from e


def _choices(section: str, values, allowed: tuple[str, ...]) -> tuple[str, ...]:
    if isinstance(values, str):
        values = [values]
    out = tuple(str(v).strip() for v in values)
    bad = [v for v in out if v.lower() not in {a.lower() for a in allowed}]
    if bad:
        raise ConfigurationError(f"[RunConfig] '{section}': unknown value(s) {', '.join(bad)} "
                                 f"(allowed: {'|'.join(allowed)})")
    return out


@dataclass(frozen=True)
class PlotSpec:
    """Files of one plot; paths are relative to the configuration file."""

    id: str
    parents: Path
    children: Path | None = None
    extended_parents: Path | None = None
    extended_window: Window | None = None

    @classmethod
    def from_mapping(cls, entry: Mapping, base: Path) -> "PlotSpec":
        _check_keys("plots[]", entry, {"id", "parents", "children", "extended_parents", "extended_window"})
        if "id" not in entry or "parents" not in entry:
            raise ConfigurationError("[RunConfig] every plot needs 'id' and 'parents'")

        def path(key):
            value = entry.get(key)
            if value is None:
                return None
            p = Path(str(value))
            return p if p.is_absolute() else base / p

        ext_window = entry.get("extended_window")
        return cls(str(entry["id"]), path("parents"), path("children"), path("extended_parents"),
                   _window("plots[].extended_window", ext_window) if ext_window is not None else None)

    def missing_files(self) -> list[Path]:
        return [p for p in (self.parents, self.children, self.extended_parents) if p is not None and not p.is_file()]


@dataclass(frozen=True)
class EnvelopeSettings:
    statistics: tuple[str, ...] = STATISTICS
    n_sims: int = 999
    level: float = 0.95
    r_max: float = DEFAULT_R_MAX
    r_step: float = DEFAULT_R_STEP
    f_spacing: float = DEFAULT_F_SPACING
    sim_cell_size: float = 0.2
    chain: Path | None = None

    @classmethod
    def from_mapping(cls, mapping: Mapping | None, base: Path) -> "EnvelopeSettings":
        mapping = dict(mapping or {})
        _check_keys("envelope", mapping, {f for f in cls.__dataclass_fields__})
        out = cls()
        if "statistics" in mapping:
            stats = tuple(s.upper() for s in _choices("envelope.statistics", mapping["statistics"], STATISTICS))
            out = replace(out, statistics=stats)
        if "n_sims" in mapping:
            n = int(mapping["n_sims"])
            if n < 0:
                raise ConfigurationError(f"[RunConfig] 'envelope.n_sims' must be >= 0, got {n}")
            out = replace(out, n_sims=n)
        if "level" in mapping:
            level = float(mapping["level"])
            if not 0 < level < 1:
                raise ConfigurationError(f"[RunConfig] 'envelope.level' must lie in (0, 1), got {level}")
            out = replace(out, level=level)
        for key in ("r_max", "r_step", "f_spacing", "sim_cell_size"):
            if key in mapping:
                out = replace(out, **{key: _positive(f"envelope.{key}", mapping[key])})
        if mapping.get("chain") is not None:
            p = Path(str(mapping["chain"]))
            out = replace(out, chain=p if p.is_absolute() else base / p)
        return out


@dataclass(frozen=True)
class ExperimentSettings:
    replicates: int = 1
    processes: tuple[str, ...] = PROCESSES
    regimes: tuple[str, ...] = ("estimated", "strong", "wide")
    edge_modes: tuple[str, ...] = EDGE_MODES
    target_count: float = 600.0
    extended_window: Window = Window(-20.0, 60.0, -20.0, 60.0)
    parent_intensity: float = 0.0375
    strauss: StraussParams = StraussParams(0.06, 0.1, 2.0)
    estimator: str = "mean"

    @classmethod
    def from_mapping(cls, mapping: Mapping | None) -> "ExperimentSettings":
        from .experiment import REGIMES

        mapping = dict(mapping or {})
        _check_keys("experiment", mapping, {f for f in cls.__dataclass_fields__})
        out = cls()
        if "replicates" in mapping:
            n = int(mapping["replicates"])
            if n < 1:
                raise ConfigurationError(f"[RunConfig] 'experiment.replicates' must be >= 1, got {n}")
            out = replace(out, replicates=n)
        if "processes" in mapping:
            out = replace(out, processes=tuple(p.lower() for p in _choices("experiment.processes",
                                                                          mapping["processes"], PROCESSES)))
        if "regimes" in mapping:
            out = replace(out, regimes=tuple(r.lower() for r in _choices("experiment.regimes", mapping["regimes"],
                                                                        tuple(REGIMES))))
        if "edge_modes" in mapping:
            out = replace(out, edge_modes=tuple(m.lower() for m in _choices("experiment.edge_modes",
                                                                           mapping["edge_modes"], EDGE_MODES)))
        if "target_count" in mapping:
            out = replace(out, target_count=_positive("experiment.target_count", mapping["target_count"]))
        if "parent_intensity" in mapping:
            out = replace(out, parent_intensity=_positive("experiment.parent_intensity", mapping["parent_intensity"]))
        if "extended_window" in mapping:
            out = replace(out, extended_window=_window("experiment.extended_window", mapping["extended_window"]))
        if "strauss" in mapping:
            s = mapping["strauss"]
            _check_keys("experiment.strauss", s, {"beta", "gamma", "R", "n_mh"})
            merged = {"beta": 0.06, "gamma": 0.1, "R": 2.0, "n_mh": DEFAULT_MH_PROPOSALS, **s}
            out = replace(out, strauss=StraussParams(float(merged["beta"]), float(merged["gamma"]),
                                                     float(merged["R"]), int(merged["n_mh"])))
        if "estimator" in mapping:
            est = str(mapping["estimator"]).lower()
            if est not in ("mean", "map"):
                raise ConfigurationError(f"[RunConfig] 'experiment.estimator' must be mean|map, got {est}")
            out = replace(out, estimator=est)
        return out


@dataclass(frozen=True)
class SimulateSettings:
    """Batch simulation: one parent pattern and ``n_realisations`` child patterns."""

    n_realisations: int = 1
    process: str = "poisson"
    regime: str = "estimated"
    target_count: float = 600.0

    @classmethod
    def from_mapping(cls, mapping: Mapping | None) -> "SimulateSettings":
        from .experiment import REGIMES

        mapping = dict(mapping or {})
        _check_keys("simulate", mapping, {f for f in cls.__dataclass_fields__})
        out = cls()
        if "n_realisations" in mapping:
            n = int(mapping["n_realisations"])
            if n < 1:
                raise ConfigurationError(f"[RunConfig] 'simulate.n_realisations' must be >= 1, got {n}")
            out = replace(out, n_realisations=n)
        if "process" in mapping:
            out = replace(out, process=_choices("simulate.process", mapping["process"], PROCESSES)[0].lower())
        if "regime" in mapping:
            out = replace(out, regime=_choices("simulate.regime", mapping["regime"], tuple(REGIMES))[0].lower())
        if "target_count" in mapping:
            out = replace(out, target_count=_positive("simulate.target_count", mapping["target_count"]))
        return out


@dataclass(frozen=True)
class RunConfig:
    mode: str = "fit"
    window: Window = Window(0.0, 40.0, 0.0, 40.0)
    cell_size: float = 1.0
    sim_cell_size: float = 0.1
    kernel: InfluenceKernel = field(default_factory=lambda: GaussianKernel(theta=2.1))
    edge_mode: str = "poisson"
    parent_intensity: float | None = None
    priors: PriorSpec = field(default_factory=PriorSpec)
    chain: ChainSettings = field(default_factory=ChainSettings)
    seed: int = DEFAULT_SEED
    init: dict = field(default_factory=dict)
    plots: tuple[PlotSpec, ...] = ()
    envelope: EnvelopeSettings = field(default_factory=EnvelopeSettings)
    experiment: ExperimentSettings = field(default_factory=ExperimentSettings)
    simulate: SimulateSettings = field(default_factory=SimulateSettings)
    output_dir: Path = Path(DEFAULT_OUTPUT_DIR)
    n_jobs: int = 1
    cutoff_sd: float = 5.0
    source: str = "<mapping>"
    raw: dict = field(default_factory=dict, compare=False, repr=False)

    @classmethod
    def from_mapping(cls, mapping: Mapping[str, Any], *, base_dir: str | Path = ".",
                     source: str = "<mapping>") -> "RunConfig":
        if mapping is None:
            mapping = {}
        _check_keys("<top level>", mapping, _TOP_LEVEL_KEYS)
        base = Path(base_dir)
        kw: dict[str, Any] = {"source": source, "raw": dict(mapping)}

        if "mode" in mapping:
            mode = str(mapping["mode"]).strip().lower()
            if mode not in MODES:
                raise ConfigurationError(f"[RunConfig] unknown mode '{mode}' ({'|'.join(MODES)})")
            kw["mode"] = mode
        if "window" in mapping:
            kw["window"] = _window("window", mapping["window"])
        for key in ("cell_size", "sim_cell_size", "cutoff_sd"):
            if key in mapping:
                kw[key] = _positive(key, mapping[key])
        if "kernel" in mapping:
            kw["kernel"] = kernel_from_config(mapping["kernel"])
        if "edge_mode" in mapping:
            kw["edge_mode"] = _choices("edge_mode", mapping["edge_mode"], EDGE_MODES)[0].lower()
        if mapping.get("parent_intensity") is not None:
            kw["parent_intensity"] = _positive("parent_intensity", mapping["parent_intensity"])
        if "priors" in mapping:
            kw["priors"] = PriorSpec.from_mapping(mapping["priors"])
        if "chain" in mapping:
            chain = dict(mapping["chain"] or {})
            if "seed" in chain:
                kw["seed"] = int(chain["seed"])
            kw["chain"] = ChainSettings.from_mapping(chain)
        if "init" in mapping:
            init = mapping["init"] or {}
            _check_keys("init", init, {"beta0", "beta1", "theta", "delta", "alpha", "sigmaZ", "rhoZ"})
            kw["init"] = dict(init)
        if "plots" in mapping:
            plots = mapping["plots"] or []
            if not isinstance(plots, list):
                raise ConfigurationError("[RunConfig] 'plots' must be a list")
            specs = tuple(PlotSpec.from_mapping(p, base) for p in plots)
            ids = [p.id for p in specs]
            if len(set(ids)) != len(ids):
                raise ConfigurationError(f"[RunConfig] duplicate plot ids: {ids}")
            kw["plots"] = specs
        if "envelope" in mapping:
            kw["envelope"] = EnvelopeSettings.from_mapping(mapping["envelope"], base)
        if "experiment" in mapping:
            kw["experiment"] = ExperimentSettings.from_mapping(mapping["experiment"])
        if "simulate" in mapping:
            kw["simulate"] = SimulateSettings.from_mapping(mapping["simulate"])
        if "output_dir" in mapping:
            kw["output_dir"] = Path(str(mapping["output_dir"]))
        if "n_jobs" in mapping:
            n_jobs = int(mapping["n_jobs"])
            if n_jobs == 0:
                raise ConfigurationError("[RunConfig] 'n_jobs' must not be 0")
            kw["n_jobs"] = n_jobs
        return cls(**kw)

    def with_overrides(self, *, seed: int | None = None, out: str | Path | None = None,
                       mode: str | None = None, environ: Mapping[str, str] | None = None) -> "RunConfig":
        """``--out`` beats ``COXFIELD_OUTPUT_DIR`` beats the file."""
        environ = os.environ if environ is None else environ
        cfg = self
        if mode is not None:
            if mode not in MODES:
                raise ConfigurationError(f"[RunConfig] unknown mode '{mode}' ({'|'.join(MODES)})")
            cfg = replace(cfg, mode=mode)
        if seed is not None:
            cfg = replace(cfg, seed=int(seed))
        if out is not None:
            cfg = replace(cfg, output_dir=Path(out))
        elif environ.get(OUTPUT_DIR_ENV):
            cfg = replace(cfg, output_dir=Path(environ[OUTPUT_DIR_ENV]))
        return cfg

    def with_chain(self, **updates) -> "RunConfig":
        return replace(self, chain=replace(self.chain, **updates))

    def check_plot_files(self):
        if not self.plots:
            raise ConfigurationError(f"[RunConfig] mode '{self.mode}' needs at least one plot")
        for plot in self.plots:
            missing = plot.missing_files()
            if missing:
                raise ConfigurationError(f"[RunConfig] plot {plot.id}: file(s) not found: "
                                         f"{', '.join(str(m) for m in missing)}")

    def echo(self) -> dict:
        """Configuration echoed into output headers."""
        return {
            "config_source": self.source,
            "mode": self.mode,
            "seed": self.seed,
            "window": list(self.window.as_tuple()),
            "cell_size": self.cell_size,
            "kernel": self.kernel.describe(),
            "edge_mode": self.edge_mode,
            "config": self.raw,
        }


def load_run_config(name: str | Path, *, seed: int | None = None, out: str | Path | None = None,
                    mode: str | None = None) -> RunConfig:
    """Load, validate and override a run configuration."""
    mapping, source = load_yaml_with_fallback(name)
    src = Path(source)
    base = src.parent if src.is_file() else Path(".")
    try:
        cfg = RunConfig.from_mapping(mapping, base_dir=base, source=source)
    except ConfigurationError:
        raise
    except (TypeError, ValueError) as e:
        raise ConfigurationError(f"[load_run_config] {source}: {e}") from e
    cfg = cfg.with_overrides(seed=seed, out=out, mode=mode)
    logger.info(f"[load_run_config] {name} -> {source} (mode {cfg.mode}, seed {cfg.seed})")
    return cfg
