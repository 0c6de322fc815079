"""Robust adaptive Metropolis over the transformed parameter vector.

Positive parameters (kernel range and exponents, field sd and range) are
sampled on the log scale; intercepts and ``beta1`` as they are. The
proposal is ``x + S u`` with ``u`` standard normal, and ``S`` adapts by the
rank-one rule::

    S' S'^T = S (I + eta_n (a_n - target) u u^T / |u|^2) S^T
    eta_n   = min(1, d * n^(-gamma))

so that the acceptance rate settles at the target (0.234 by default).
"""
from __future__ import annotations

import copy
import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np
from joblib import Parallel, delayed
from robot.api import logger
from scipy import fft

from .errors import ConfigurationError, DataError
from .gmrf import MaternParams
from .kernels.influence_kernel import InfluenceKernel, NoInfluence, kernel_class
from .likelihood import LgcpModel, ModelParams
from .priors import PriorSpec, log_prior
from .utils.textio import read_table, write_table

QUANTILES = (0.05, 0.25, 0.5, 0.75, 0.95)
SUMMARY_COLUMNS = ("mean", "q05", "q25", "q50", "q75", "q95", "map")
ESS_WARN = 1000.0


# ---------------------------------------------------------------------------
# Parameter layout
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ParameterLayout:
    """Order and transforms of the free parameters."""

    plot_ids: tuple[str, ...]
    kernel_cls: type

    @classmethod
    def from_params(cls, params: ModelParams) -> "ParameterLayout":
        return cls(params.ids, type(params.kernel))

    @property
    def has_influence(self) -> bool:
        return not issubclass(self.kernel_cls, NoInfluence)

    @property
    def names(self) -> tuple[str, ...]:
        out = [f"beta0_{pid}" for pid in self.plot_ids]
        if self.has_influence:
            out.append("beta1")
            out.extend(self.kernel_cls.param_names)
        out.extend(["sigmaZ", "rhoZ"])
        return tuple(out)

    @property
    def log_scale(self) -> np.ndarray:
        return np.array([not (n.startswith("beta0") or n == "beta1") for n in self.names])

    @property
    def dim(self) -> int:
        return len(self.names)

    @property
    def kernel_path(self) -> str:
        return f"{self.kernel_cls.__module__}.{self.kernel_cls.__qualname__}"

    def to_values(self, u: np.ndarray) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        with np.errstate(over="ignore"):
            return np.where(self.log_scale, np.exp(u), u)

    def to_unconstrained(self, params: ModelParams) -> np.ndarray:
        values = params.named_values()
        v = np.array([values[n] for n in self.names], dtype=float)
        if np.any(v[self.log_scale] <= 0):
            raise ConfigurationError("[ParameterLayout] positive parameter at or below zero")
        return np.where(self.log_scale, np.log(np.where(self.log_scale, v, 1.0)), v)

    def params_from_values(self, values: Sequence[float]) -> ModelParams:
        named = dict(zip(self.names, (float(v) for v in values)))
        beta0 = tuple(named[f"beta0_{pid}"] for pid in self.plot_ids)
        kernel = self.kernel_cls(**{p: named[p] for p in self.kernel_cls.param_names}) \
            if self.has_influence else self.kernel_cls()
        beta1 = named.get("beta1", 0.0)
        return ModelParams(beta0, beta1, kernel, MaternParams.from_sd(named["sigmaZ"], named["rhoZ"]),
                           self.plot_ids)

    def params_from_unconstrained(self, u: np.ndarray) -> ModelParams:
        return self.params_from_values(self.to_values(u))

    def log_jacobian(self, u: np.ndarray) -> float:
        return float(np.sum(np.asarray(u)[self.log_scale]))


# ---------------------------------------------------------------------------
# RAM kernel
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class RamState:
    x: np.ndarray
    logp: float
    S: np.ndarray
    n: int = 0
    target: float = 0.234
    gamma: float = 2.0 / 3.0
    adapt: bool = True
    last_accept_prob: float = 0.0

    @classmethod
    def initial(cls, x0, logp0: float, scale: float | np.ndarray = 0.1, **kw) -> "RamState":
        x0 = np.asarray(x0, dtype=float)
        s = np.broadcast_to(np.asarray(scale, dtype=float), x0.shape)
        if np.any(s <= 0):
            raise ConfigurationError("[RamState] initial proposal scale must be > 0")
        return cls(x0.copy(), float(logp0), np.diag(s.astype(float)), **kw)


def chol_rank_one(L: np.ndarray, v: np.ndarray, sign: float) -> np.ndarray:
    """Lower Cholesky factor of ``L L^T + sign * v v^T``."""
    L = np.array(L, dtype=float)
    v = np.array(v, dtype=float)
    n = L.shape[0]
    for k in range(n):
        r2 = L[k, k] ** 2 + sign * v[k] ** 2
        if not r2 > 0:
            raise FloatingPointError("[chol_rank_one] update leaves the matrix indefinite")
        r = math.sqrt(r2)
        c = r / L[k, k]
        s = v[k] / L[k, k]
        L[k, k] = r
        if k + 1 < n:
            L[k + 1:, k] = (L[k + 1:, k] + sign * s * v[k + 1:]) / c
            v[k + 1:] = c * v[k + 1:] - s * L[k + 1:, k]
    return L


def ram_adapt(S: np.ndarray, u: np.ndarray, coef: float) -> np.ndarray:
    """``S'`` with ``S' S'^T = S (I + coef u u^T / |u|^2) S^T``."""
    norm = float(np.linalg.norm(u))
    if coef == 0.0 or norm == 0.0:
        return S
    v = (S @ u) * (math.sqrt(abs(coef)) / norm)
    try:
        return chol_rank_one(S, v, 1.0 if coef > 0 else -1.0)
    except FloatingPointError:
        logger.debug("[ram_adapt] downdate not positive definite, keeping proposal")
        return S


def ram_step(state: RamState, log_target: Callable[[np.ndarray], float],
             rng: np.random.Generator) -> tuple[RamState, bool]:
    """One proposal, accept/reject and (unless frozen) proposal adaptation."""
    d = state.x.shape[0]
    u = rng.standard_normal(d)
    proposal = state.x + state.S @ u
    lp = log_target(proposal)
    if math.isfinite(lp) and math.isfinite(state.logp):
        a = 1.0 if lp >= state.logp else math.exp(lp - state.logp)
    else:
        a = 0.0
    accepted = bool(rng.uniform() < a)
    n = state.n + 1
    S = state.S
    if state.adapt:
        eta = min(1.0, d * n ** (-state.gamma))
        S = ram_adapt(S, u, eta * (a - state.target))
    if accepted:
        return replace(state, x=proposal, logp=float(lp), S=S, n=n, last_accept_prob=a), True
    return replace(state, S=S, n=n, last_accept_prob=a), False


# ---------------------------------------------------------------------------
# Chains
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ChainSettings:
    n_iter: int = 100_000
    burn_in: int = 20_000
    thin: int = 10
    n_chains: int = 1
    gamma: float = 2.0 / 3.0
    target_acceptance: float = 0.234
    initial_scale: float = 0.1
    adapt: bool = True

    def __post_init__(self):
        if self.n_iter < 0 or self.burn_in < 0:
            raise ConfigurationError("[ChainSettings] n_iter and burn_in must be >= 0")
        if self.burn_in > self.n_iter:
            raise ConfigurationError(f"[ChainSettings] burn_in {self.burn_in} exceeds n_iter {self.n_iter}")
        if self.thin < 1 or self.n_chains < 1:
            raise ConfigurationError("[ChainSettings] thin and n_chains must be >= 1")
        if not 0.5 < self.gamma <= 1.0:
            raise ConfigurationError(f"[ChainSettings] gamma must lie in (0.5, 1], got {self.gamma}")
        if not 0 < self.target_acceptance < 1:
            raise ConfigurationError("[ChainSettings] target_acceptance must lie in (0, 1)")
        if not self.initial_scale > 0:
            raise ConfigurationError("[ChainSettings] initial_scale must be > 0")

    @property
    def n_stored(self) -> int:
        return (self.n_iter - self.burn_in) // self.thin

    @classmethod
    def from_mapping(cls, mapping: Mapping | None) -> "ChainSettings":
        mapping = dict(mapping or {})
        mapping.pop("seed", None)
        known = set(cls.__dataclass_fields__)
        unknown = sorted(set(mapping) - known)
        if unknown:
            raise ConfigurationError(f"[ChainSettings] unknown key(s): {', '.join(unknown)}")
        ints = {"n_iter", "burn_in", "thin", "n_chains"}
        return cls(**{k: (int(v) if k in ints else bool(v) if k == "adapt" else float(v))
                      for k, v in mapping.items()})


@dataclass
class SamplerRun:
    """Raw output of :func:`run_sampler` on the unconstrained scale."""

    samples: np.ndarray
    log_target: np.ndarray
    accepted: int
    n_iter: int
    final_state: RamState

    @property
    def acceptance_rate(self) -> float:
        return self.accepted / self.n_iter if self.n_iter else 0.0


def run_sampler(log_target: Callable[[np.ndarray], float], x0, settings: ChainSettings, seed: int,
                on_accept: Callable[[], None] | None = None, logp0: float | None = None,
                label: str = "chain") -> SamplerRun:
    """Run RAM for ``settings.n_iter`` steps, keeping every ``thin``-th post burn-in state."""
    rng = np.random.default_rng(seed)
    x0 = np.asarray(x0, dtype=float)
    lp0 = log_target(x0) if logp0 is None else logp0
    state = RamState.initial(x0, lp0, settings.initial_scale, target=settings.target_acceptance,
                             gamma=settings.gamma, adapt=settings.adapt)
    samples = np.empty((settings.n_stored, x0.shape[0]))
    trace = np.empty(settings.n_stored)
    accepted = 0
    stored = 0
    report = max(1, settings.n_iter // 10)
    for t in range(1, settings.n_iter + 1):
        state, acc = ram_step(state, log_target, rng)
        if acc:
            accepted += 1
            if on_accept is not None:
                on_accept()
        if t > settings.burn_in and (t - settings.burn_in) % settings.thin == 0:
            samples[stored] = state.x
            trace[stored] = state.logp
            stored += 1
        if t % report == 0:
            logger.info(f"[run_sampler] {label}: {t}/{settings.n_iter} iterations, "
                        f"acceptance {accepted / t:.3f}, log target {state.logp:.4f}")
    return SamplerRun(samples[:stored], trace[:stored], accepted, settings.n_iter, state)


@dataclass
class Chain:
    """Thinned samples on the original scale plus diagnostics."""

    layout: ParameterLayout
    samples: np.ndarray
    logpost: np.ndarray
    accepted: int
    settings: ChainSettings
    seed: int
    newton_failures: int = 0
    ess: dict[str, float] = field(default_factory=dict)
    proposal_factor: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    @property
    def names(self) -> tuple[str, ...]:
        return self.layout.names

    @property
    def acceptance_rate(self) -> float:
        return self.accepted / self.settings.n_iter if self.settings.n_iter else 0.0

    def __len__(self) -> int:
        return int(self.samples.shape[0])

    def column(self, name: str) -> np.ndarray:
        try:
            return self.samples[:, self.names.index(name)]
        except ValueError:
            raise ConfigurationError(f"[Chain] no parameter '{name}' (have {', '.join(self.names)})") from None

    def params_at(self, i: int) -> ModelParams:
        return self.layout.params_from_values(self.samples[i])


def effective_sample_size(x: np.ndarray) -> float:
    """ESS from the autocorrelation with Geyer's initial positive sequence."""
    x = np.asarray(x, dtype=float)
    n = x.shape[0]
    if n < 4:
        return float(n)
    xc = x - x.mean()
    if not np.any(xc):
        return float(n)
    f = fft.rfft(xc, n=2 * n)
    acov = fft.irfft(f * np.conj(f), n=2 * n)[:n] / n
    rho = acov / acov[0]
    tau = -1.0
    prev = math.inf
    for k in range(0, n - 1, 2):
        pair = rho[k] + rho[k + 1]
        if pair <= 0:
            break
        pair = min(pair, prev)
        tau += 2.0 * pair
        prev = pair
    return float(n / max(tau, 1.0 / n))


def chain_seeds(seed: int, n_chains: int) -> list[int]:
    if n_chains == 1:
        return [int(seed)]
    return [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(int(seed)).spawn(n_chains)]


def run_chain(model: LgcpModel, priors: PriorSpec | None, init: ModelParams, settings: ChainSettings,
              seed: int, label: str = "chain") -> Chain:
    """One RAM chain over *model*; deterministic given *seed*."""
    if priors is not None:
        model.priors = priors
    model.reset()
    model.check_kernel(init.kernel)
    if init.n_replicates != len(model.replicates):
        raise ConfigurationError(f"[run_chain] init has {init.n_replicates} intercepts for "
                                 f"{len(model.replicates)} plots")
    init = replace(init, plot_ids=model.plot_ids)
    layout = ParameterLayout.from_params(init)
    if not math.isfinite(log_prior(init, model.priors)):
        raise ConfigurationError(f"[run_chain] initial values outside the prior support: {init.named_values()}")
    x0 = layout.to_unconstrained(init)
    lp0 = model.log_posterior(init)
    if not math.isfinite(lp0):
        raise ConfigurationError("[run_chain] log posterior at the initial values is not finite")
    model.commit()

    def log_target(u):
        try:
            params = layout.params_from_unconstrained(u)
        except ConfigurationError:
            return -math.inf
        return model.log_posterior(params) + layout.log_jacobian(u)

    failures0 = model.diagnostics.newton_failures
    run = run_sampler(log_target, x0, settings, seed, on_accept=model.commit,
                      logp0=lp0 + layout.log_jacobian(x0), label=label)
    jac = np.array([layout.log_jacobian(u) for u in run.samples]) if len(run.samples) else np.zeros(0)
    values = np.array([layout.to_values(u) for u in run.samples]).reshape(-1, layout.dim)
    chain = Chain(layout, values, run.log_target - jac, run.accepted, settings, int(seed),
                  newton_failures=model.diagnostics.newton_failures - failures0,
                  proposal_factor=run.final_state.S,
                  meta={"kernel": init.kernel.name, "edge_mode": _edge_names(model)})
    chain.ess = {name: effective_sample_size(values[:, i]) for i, name in enumerate(layout.names)} \
        if len(chain) else {}
    _log_diagnostics(chain, label)
    return chain


def _edge_names(model: LgcpModel) -> str:
    return ",".join(sorted({r.edge_mode.name for r in model.replicates}))


def _log_diagnostics(chain: Chain, label: str):
    logger.info(f"[run_chain] {label}: acceptance {chain.acceptance_rate:.3f}, "
                f"{chain.newton_failures} Newton failures, {len(chain)} stored samples")
    low = {k: v for k, v in chain.ess.items() if v < ESS_WARN}
    if low:
        listing = ", ".join(f"{k}={v:.0f}" for k, v in low.items())
        logger.warn(f"[run_chain] {label}: effective sample size below {ESS_WARN:.0f}: {listing}")


def run_chains(model: LgcpModel, priors: PriorSpec | None, init: ModelParams, settings: ChainSettings,
               seed: int, n_jobs: int = 1) -> list[Chain]:
    """``settings.n_chains`` independent chains with derived seeds, in parallel."""
    seeds = chain_seeds(seed, settings.n_chains)
    if len(seeds) == 1:
        return [run_chain(model, priors, init, settings, seeds[0])]
    jobs = (delayed(run_chain)(copy.deepcopy(model), priors, init, settings, s, f"chain {i + 1}")
            for i, s in enumerate(seeds))
    return list(Parallel(n_jobs=n_jobs)(jobs))


# ---------------------------------------------------------------------------
# Summaries and export
# ---------------------------------------------------------------------------

@dataclass
class SummaryTable:
    names: tuple[str, ...]
    rows: dict[str, dict[str, float]]

    def value(self, name: str, column: str = "mean") -> float:
        try:
            return self.rows[name][column]
        except KeyError:
            raise ConfigurationError(f"[SummaryTable] no entry {name}/{column}") from None


def _pooled(chains: Chain | Sequence[Chain], caller: str = "summarize"
            ) -> tuple[tuple[str, ...], np.ndarray, np.ndarray]:
    chains = [chains] if isinstance(chains, Chain) else list(chains)
    if not chains:
        raise DataError(f"[{caller}] no chains")
    names = chains[0].names
    if any(c.names != names for c in chains):
        raise DataError(f"[{caller}] chains have different parameters")
    samples = np.vstack([c.samples for c in chains]) if chains else np.zeros((0, len(names)))
    logpost = np.concatenate([c.logpost for c in chains])
    return names, samples, logpost


def summarize(chains: Chain | Sequence[Chain]) -> SummaryTable:
    """Mean, quantiles (0.05 ... 0.95, linear interpolation) and MAP sample."""
    names, samples, logpost = _pooled(chains)
    if samples.shape[0] == 0:
        raise DataError("[summarize] empty chain")
    q = np.quantile(samples, QUANTILES, axis=0, method="linear")
    best = int(np.argmax(logpost))
    rows = {}
    for i, name in enumerate(names):
        rows[name] = {"mean": float(samples[:, i].mean()),
                      **{col: float(q[j, i]) for j, col in enumerate(SUMMARY_COLUMNS[1:6])},
                      "map": float(samples[best, i])}
    return SummaryTable(names, rows)


def pool_chains(chains: Chain | Sequence[Chain]) -> Chain:
    """One chain holding the stored samples of all *chains* in order.

    Iteration counts and failures add up; the ESS of the pool is the sum of
    the per-chain values. A single chain is returned as is.
    """
    if isinstance(chains, Chain):
        return chains
    chains = list(chains)
    if len(chains) == 1:
        return chains[0]
    _names, samples, logpost = _pooled(chains, "pool_chains")
    first = chains[0]
    if any(c.layout != first.layout for c in chains):
        raise DataError("[pool_chains] chains belong to different models")
    n = len(chains)
    settings = replace(first.settings, n_iter=sum(c.settings.n_iter for c in chains),
                       burn_in=sum(c.settings.burn_in for c in chains), n_chains=n)
    ess = {}
    if all(c.ess for c in chains):
        ess = {name: float(sum(c.ess.get(name, 0.0) for c in chains)) for name in first.names}
    return Chain(first.layout, samples, logpost, sum(c.accepted for c in chains), settings, first.seed,
                 newton_failures=sum(c.newton_failures for c in chains), ess=ess, meta=dict(first.meta))


def chain_meta(chain: Chain, extra: Mapping | None = None) -> dict:
    meta = {
        "seed": chain.seed,
        "settings": asdict(chain.settings),
        "plot_ids": list(chain.layout.plot_ids),
        "kernel_class": chain.layout.kernel_path,
        "model_variant": chain.meta.get("kernel", ""),
        "edge_mode": chain.meta.get("edge_mode", ""),
        "accepted": chain.accepted,
        "acceptance_rate": round(chain.acceptance_rate, 6),
        "newton_failures": chain.newton_failures,
        "ess": {k: round(v, 3) for k, v in chain.ess.items()},
    }
    meta.update(extra or {})
    return meta


def write_chain(chain: Chain, path: str | Path, extra_meta: Mapping | None = None) -> Path:
    columns = list(chain.names) + ["logpost"]
    rows = np.column_stack([chain.samples, chain.logpost]) if len(chain) else np.zeros((0, len(columns)))
    path = write_table(path, columns, rows, chain_meta(chain, extra_meta), fmt="%.17g")
    logger.info(f"[write_chain] {path}")
    return path


def read_chain(path: str | Path) -> Chain:
    meta, columns, data = read_table(path)
    try:
        settings = ChainSettings(**json.loads(meta["settings"]))
        plot_ids = tuple(json.loads(meta["plot_ids"]))
        kernel_cls = kernel_class(meta["kernel_class"])
        seed = int(meta["seed"])
    except (KeyError, ValueError, TypeError) as e:
        raise DataError(f"[read_chain] missing or malformed metadata: {e}", path=str(path)) from e
    layout = ParameterLayout(plot_ids, kernel_cls)
    if columns != list(layout.names) + ["logpost"]:
        raise DataError(f"[read_chain] columns {columns} do not match {list(layout.names)}", path=str(path))
    return Chain(layout, data[:, :-1], data[:, -1], int(meta.get("accepted", 0)), settings, seed,
                 newton_failures=int(meta.get("newton_failures", 0)),
                 ess=json.loads(meta.get("ess", "{}")),
                 meta={"kernel": meta.get("model_variant", ""), "edge_mode": meta.get("edge_mode", "")})


def write_summary(table: SummaryTable, path: str | Path, meta: Mapping | None = None) -> Path:
    rows = [[name] + [table.rows[name][c] for c in SUMMARY_COLUMNS] for name in table.names]
    return write_table(path, ["parameter", *SUMMARY_COLUMNS], rows, meta)
