"""Parent and child pattern simulation.

Parents come from a homogeneous Poisson process or a Strauss process
(density proportional to ``beta^n gamma^s(x)`` with ``s`` the number of
``R``-close pairs). Children are drawn from the conditional LGCP with a
piecewise constant intensity on a fine grid.

Independent simulations use one generator per simulation index derived
from ``SeedSequence(seed, spawn_key=(i,))`` so that results do not depend
on worker scheduling.
"""
from __future__ import annotations

import math
import threading
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from joblib import Parallel, delayed
from robot.api import logger
from scipy.spatial import cKDTree

from .edge_correction import EdgeCorrectionMode, NoCorrection, corrected_field
from .errors import ConfigurationError, DataError
from .geometry import Grid, PointPattern, Window, discretize
from .gmrf import MaternParams, PrecisionOperator, build_precision, gmrf_sample
from .influence import DEFAULT_CUTOFF_SD, InfluenceField
from .likelihood import ModelParams

DEFAULT_SIM_CELL = 0.1
DEFAULT_MH_PROPOSALS = 100_000


def simulation_rng(seed: int, index: int) -> np.random.Generator:
    """Generator for simulation *index* of a run seeded with *seed*."""
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(int(index),)))


# ---------------------------------------------------------------------------
# Parent processes
# ---------------------------------------------------------------------------

def sample_poisson(intensity: float, window: Window, rng: np.random.Generator) -> PointPattern:
    """Homogeneous Poisson pattern with ``intensity`` points per square metre."""
    if not (intensity > 0 and math.isfinite(intensity)):
        raise ConfigurationError(f"[sample_poisson] intensity must be > 0, got {intensity}")
    n = int(rng.poisson(intensity * window.area))
    x = rng.uniform(window.x_min, window.x_max, n)
    y = rng.uniform(window.y_min, window.y_max, n)
    return PointPattern(np.column_stack([x, y]), window)


@dataclass(frozen=True)
class StraussParams:
    beta: float
    gamma: float
    R: float
    n_mh: int = DEFAULT_MH_PROPOSALS

    def __post_init__(self):
        if not self.beta > 0:
            raise ConfigurationError(f"[StraussParams] beta must be > 0, got {self.beta}")
        if not 0.0 <= self.gamma <= 1.0:
            raise ConfigurationError(f"[StraussParams] gamma must lie in [0, 1], got {self.gamma}")
        if not self.R > 0:
            raise ConfigurationError(f"[StraussParams] R must be > 0, got {self.R}")
        if self.n_mh < 0:
            raise ConfigurationError(f"[StraussParams] n_mh must be >= 0, got {self.n_mh}")


def _interaction(gamma: float, t: int) -> float:
    """``gamma^t`` with ``0^0 = 1``."""
    if t == 0:
        return 1.0
    return 0.0 if gamma == 0.0 else gamma ** t


def _close(points: np.ndarray, n: int, x: float, y: float, r2: float, skip: int = -1) -> int:
    if n == 0:
        return 0
    d2 = (points[:n, 0] - x) ** 2 + (points[:n, 1] - y) ** 2
    close = d2 <= r2
    if 0 <= skip < n:
        close[skip] = False
    return int(np.count_nonzero(close))


def sample_strauss(params: StraussParams, window: Window, rng: np.random.Generator) -> PointPattern:
    """Birth, death and move Metropolis-Hastings for the Strauss density.

    Each of the ``n_mh`` proposals is a birth, a death or a move with
    probability 1/3; the chain starts from the empty pattern.
    """
    area = window.area
    r2 = params.R ** 2
    capacity = max(16, int(4 * params.beta * area) + 16)
    pts = np.empty((capacity, 2))
    n = 0
    for _ in range(params.n_mh):
        kind = rng.integers(3)
        if kind == 0:
            x = rng.uniform(window.x_min, window.x_max)
            y = rng.uniform(window.y_min, window.y_max)
            t = _close(pts, n, x, y, r2)
            ratio = params.beta * area / (n + 1) * _interaction(params.gamma, t)
            if rng.uniform() < ratio:
                if n == pts.shape[0]:
                    pts = np.vstack([pts, np.empty_like(pts)])
                pts[n] = (x, y)
                n += 1
        elif kind == 1:
            if n == 0:
                continue
            i = int(rng.integers(n))
            t = _close(pts, n, pts[i, 0], pts[i, 1], r2, skip=i)
            w = _interaction(params.gamma, t)
            ratio = math.inf if w == 0.0 else n / (params.beta * area) / w
            if rng.uniform() < ratio:
                pts[i] = pts[n - 1]
                n -= 1
        else:
            if n == 0:
                continue
            i = int(rng.integers(n))
            x = rng.uniform(window.x_min, window.x_max)
            y = rng.uniform(window.y_min, window.y_max)
            t_old = _close(pts, n, pts[i, 0], pts[i, 1], r2, skip=i)
            t_new = _close(pts, n, x, y, r2, skip=i)
            w_old = _interaction(params.gamma, t_old)
            w_new = _interaction(params.gamma, t_new)
            ratio = math.inf if w_old == 0.0 else w_new / w_old
            if rng.uniform() < ratio:
                pts[i] = (x, y)
    return PointPattern(pts[:n].copy(), window)


def sample_parents(process: str, window: Window, rng: np.random.Generator, *, intensity: float | None = None,
                   strauss: StraussParams | None = None) -> PointPattern:
    """``poisson`` or ``strauss`` parent pattern on *window*."""
    key = str(process).strip().lower()
    if key == "poisson":
        if intensity is None:
            raise ConfigurationError("[sample_parents] poisson parents need an intensity")
        return sample_poisson(intensity, window, rng)
    if key == "strauss":
        if strauss is None:
            raise ConfigurationError("[sample_parents] strauss parents need StraussParams")
        return sample_strauss(strauss, window, rng)
    raise ConfigurationError(f"[sample_parents] unknown parent process '{process}' (poisson|strauss)")


# ---------------------------------------------------------------------------
# Children
# ---------------------------------------------------------------------------

class SimulationCache:
    """Precisions per ``(grid, field parameters)`` and fields per kernel.

    Posterior predictive runs revisit the same stored samples; the sparse
    factorisation and the corrected influence field are reused. Lookups are
    serialised by a lock so that worker threads can share one cache.
    """

    def __init__(self, max_entries: int = 8):
        self.max_entries = max_entries
        self._precisions: dict = {}
        self._fields: dict = {}
        self._lock = threading.Lock()

    def _get(self, store: dict, key, build):
        with self._lock:
            value = store.get(key)
            if value is None:
                if len(store) >= self.max_entries:
                    store.pop(next(iter(store)))
                value = store[key] = build()
            return value

    def precision(self, grid: Grid, matern: MaternParams) -> PrecisionOperator:
        return self._get(self._precisions, (grid, matern), lambda: build_precision(grid, matern))

    def field(self, params: ModelParams, parents: PointPattern, grid: Grid, edge_mode: EdgeCorrectionMode,
              cutoff_sd: float) -> InfluenceField:
        key = (params.kernel.key, grid, id(parents), id(edge_mode), cutoff_sd)
        return self._get(self._fields, key,
                         lambda: corrected_field(params.kernel, parents, grid, edge_mode, cutoff_sd))

    def __len__(self) -> int:
        return len(self._precisions) + len(self._fields)


def _points_in_cells(grid: Grid, counts: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    cells = np.repeat(np.arange(grid.G), counts)
    j, i = np.divmod(cells, grid.n_x)
    h = grid.cell_size
    x = grid.window.x_min + (i + rng.uniform(size=cells.size)) * h
    y = grid.window.y_min + (j + rng.uniform(size=cells.size)) * h
    # uniform() may return values that round onto the upper edge
    x = np.minimum(x, grid.window.x_max)
    y = np.minimum(y, grid.window.y_max)
    return np.column_stack([x, y])


def sample_lgcp(params: ModelParams, parents: PointPattern, window: Window, sim_cell: float = DEFAULT_SIM_CELL,
                edge_mode: EdgeCorrectionMode | None = None, rng: np.random.Generator | None = None, *,
                plot: int = 0, cutoff_sd: float = DEFAULT_CUTOFF_SD,
                cache: SimulationCache | None = None) -> PointPattern:
    """Children from the conditional LGCP of plot *plot* on a ``sim_cell`` grid."""
    if rng is None:
        raise ConfigurationError("[sample_lgcp] a random generator is required")
    if not 0 <= plot < params.n_replicates:
        raise ConfigurationError(f"[sample_lgcp] plot index {plot} out of range")
    edge_mode = edge_mode if edge_mode is not None else NoCorrection()
    cache = cache if cache is not None else SimulationCache()
    grid = discretize(window, sim_cell)
    Q = cache.precision(grid, params.matern)
    z = Q.restrict(gmrf_sample(Q, rng))
    fld = cache.field(params, parents, grid, edge_mode, cutoff_sd)
    log_lam = params.beta0[plot] + params.beta1 * fld.values + z
    with np.errstate(over="ignore"):
        mean = np.exp(log_lam) * grid.cell_area
    if not np.all(np.isfinite(mean)):
        raise DataError("[sample_lgcp] intensity overflow; check beta0 and sigmaZ")
    counts = rng.poisson(mean)
    return PointPattern(_points_in_cells(grid, counts, rng), window)


def tune_intercept(target_count: float, beta1: float, sigma2: float, field_: InfluenceField) -> float:
    """``beta0`` with expected child count *target_count* on the field's grid.

    Solves ``E[N] = A * exp(beta0 + sigma^2 / 2) * sum_g exp(beta1 C_g)``.
    """
    if not target_count > 0:
        raise ConfigurationError(f"[tune_intercept] target count must be > 0, got {target_count}")
    mass = field_.grid.cell_area * float(np.sum(np.exp(beta1 * field_.values)))
    return math.log(target_count) - 0.5 * sigma2 - math.log(mass)


def expected_count(params: ModelParams, field_: InfluenceField, plot: int = 0) -> float:
    return float(field_.grid.cell_area * np.sum(np.exp(params.beta0[plot] + params.beta1 * field_.values
                                                        + 0.5 * params.matern.sigma2)))


# ---------------------------------------------------------------------------
# Posterior predictive
# ---------------------------------------------------------------------------

def _predictive_one(chain, parents, window, sim_cell, edge_mode, seed, index, plot, cutoff_sd, cache):
    rng = simulation_rng(seed, index)
    draw = int(rng.integers(len(chain)))
    return sample_lgcp(chain.params_at(draw), parents, window, sim_cell, edge_mode, rng,
                       plot=plot, cutoff_sd=cutoff_sd, cache=cache)


def posterior_predictive(chain, parents: PointPattern, window: Window, n_sims: int,
                         sim_cell: float = DEFAULT_SIM_CELL, edge_mode: EdgeCorrectionMode | None = None,
                         rng: np.random.Generator | None = None, *, plot: int = 0,
                         cutoff_sd: float = DEFAULT_CUTOFF_SD, n_jobs: int = 1) -> list[PointPattern]:
    """*n_sims* child patterns, each from a stored sample drawn with replacement."""
    if n_sims < 0:
        raise ConfigurationError(f"[posterior_predictive] n_sims must be >= 0, got {n_sims}")
    if len(chain) == 0:
        raise DataError("[posterior_predictive] empty chain")
    if rng is None:
        raise ConfigurationError("[posterior_predictive] a random generator is required")
    seed = int(rng.integers(2 ** 63 - 1))
    if n_sims == 0:
        return []
    logger.info(f"[posterior_predictive] {n_sims} simulations at cell size {sim_cell:g}")
    cache = SimulationCache()
    if n_jobs == 1:
        return [_predictive_one(chain, parents, window, sim_cell, edge_mode, seed, i, plot, cutoff_sd, cache)
                for i in range(n_sims)]
    jobs = (delayed(_predictive_one)(chain, parents, window, sim_cell, edge_mode, seed, i, plot, cutoff_sd, cache)
            for i in range(n_sims))
    return list(Parallel(n_jobs=n_jobs, prefer="threads")(jobs))


def simulate_batch(params: ModelParams, parents: PointPattern, window: Window, n: int, seed: int,
                   sim_cell: float = DEFAULT_SIM_CELL, edge_mode: EdgeCorrectionMode | None = None,
                   plot: int = 0, cutoff_sd: float = DEFAULT_CUTOFF_SD) -> list[PointPattern]:
    """*n* independent child realisations; realisation ``i`` uses ``simulation_rng(seed, i)``."""
    cache = SimulationCache()
    return [sample_lgcp(params, parents, window, sim_cell, edge_mode, simulation_rng(seed, i),
                        plot=plot, cutoff_sd=cutoff_sd, cache=cache) for i in range(n)]


def mean_count(patterns: Sequence[PointPattern]) -> float:
    return float(np.mean([len(p) for p in patterns])) if patterns else 0.0


def min_pair_distance(pattern: PointPattern) -> float:
    """Smallest interpoint distance (``inf`` below two points)."""
    if len(pattern) < 2:
        return math.inf
    d, _ = cKDTree(pattern.points).query(pattern.points, k=2)
    return float(d[:, 1].min())
