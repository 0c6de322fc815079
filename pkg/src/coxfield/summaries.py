"""Spatial summary functions and global extreme rank length envelopes.

Estimators:

``L``
    Translational-corrected Ripley K with ``lambda^2`` estimated as
    ``n (n - 1) / |W|^2``; reported centred as ``sqrt(K / pi) - r``.
``L12``
    Cross version with ``lambda_1 lambda_2 = n_1 n_2 / |W|^2``.
``F``
    Kaplan-Meier empty space function from a regular lattice of test
    locations, censored at the distance to the window boundary.
``G``
    Kaplan-Meier nearest neighbour distance distribution, censored the
    same way.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from joblib import Parallel, delayed
from robot.api import logger
from scipy.spatial import cKDTree
from scipy.stats import rankdata

from .errors import ConfigurationError, DataError
from .geometry import PointPattern, Window
from .utils.textio import read_table, write_table

DEFAULT_R_MAX = 5.0
DEFAULT_R_STEP = 0.05
DEFAULT_F_SPACING = 0.25
MIN_ENVELOPE_SIMS = 99
STATISTICS = ("L", "F", "G", "L12")


@dataclass(frozen=True, eq=False)
class SummaryCurve:
    statistic: str
    r: np.ndarray
    values: np.ndarray
    estimator: str = ""
    settings: dict = field(default_factory=dict)

    def __post_init__(self):
        r = np.array(self.r, dtype=float).reshape(-1)
        v = np.array(self.values, dtype=float).reshape(-1)
        if r.shape != v.shape:
            raise ConfigurationError(f"[SummaryCurve] {v.shape[0]} values for {r.shape[0]} radii")
        if r.size > 1 and not np.all(np.diff(r) > 0):
            raise ConfigurationError("[SummaryCurve] r grid must be strictly increasing")
        if not np.all(np.isfinite(v)):
            raise ConfigurationError(f"[SummaryCurve] non-finite {self.statistic} values")
        r.setflags(write=False)
        v.setflags(write=False)
        object.__setattr__(self, "r", r)
        object.__setattr__(self, "values", v)


def default_r_grid(r_max: float = DEFAULT_R_MAX, step: float = DEFAULT_R_STEP) -> np.ndarray:
    """``0, step, ..., r_max``."""
    if not (r_max > 0 and step > 0):
        raise ConfigurationError(f"[default_r_grid] r_max and step must be > 0, got {r_max}, {step}")
    n = int(round(r_max / step))
    return np.arange(n + 1) * step


def _check_grid(r_grid) -> np.ndarray:
    r = np.asarray(r_grid, dtype=float).reshape(-1)
    if r.size == 0 or np.any(r < 0) or (r.size > 1 and not np.all(np.diff(r) > 0)):
        raise ConfigurationError("[summaries] r grid must be non-negative and strictly increasing")
    return r


def _translation_area(window: Window, dx: np.ndarray, dy: np.ndarray) -> np.ndarray:
    """``|W intersected with W + (dx, dy)|`` for a rectangle."""
    return np.maximum(window.width - np.abs(dx), 0.0) * np.maximum(window.height - np.abs(dy), 0.0)


def _cumulative(distances: np.ndarray, weights: np.ndarray, r: np.ndarray) -> np.ndarray:
    order = np.argsort(distances, kind="stable")
    d = distances[order]
    csum = np.concatenate([[0.0], np.cumsum(weights[order])])
    return csum[np.searchsorted(d, r, side="right")]


def _centred_l(k: np.ndarray, r: np.ndarray) -> np.ndarray:
    return np.sqrt(np.maximum(k, 0.0) / math.pi) - r


def l_function(pattern: PointPattern, r_grid) -> SummaryCurve:
    """Translational-corrected ``L(r) - r``."""
    r = _check_grid(r_grid)
    n = len(pattern)
    if n < 2:
        raise DataError(f"[l_function] at least 2 points required, got {n}")
    w = pattern.window
    tree = cKDTree(pattern.points)
    pairs = tree.query_pairs(float(r[-1]), output_type="ndarray")
    if pairs.size:
        diff = pattern.points[pairs[:, 0]] - pattern.points[pairs[:, 1]]
        dist = np.hypot(diff[:, 0], diff[:, 1])
        # each unordered pair counts for (i, j) and (j, i) with the same weight
        weights = 2.0 / _translation_area(w, diff[:, 0], diff[:, 1])
        k = w.area ** 2 / (n * (n - 1)) * _cumulative(dist, weights, r)
    else:
        k = np.zeros_like(r)
    return SummaryCurve("L", r, _centred_l(k, r), "translate")


def cross_l12(parents: PointPattern, children: PointPattern, r_grid) -> SummaryCurve:
    """Translational-corrected cross ``L12(r) - r``; symmetric in its arguments."""
    r = _check_grid(r_grid)
    n1, n2 = len(parents), len(children)
    if n1 == 0 or n2 == 0:
        raise DataError(f"[cross_l12] both patterns must be nonempty, got {n1} and {n2} points")
    if parents.window != children.window:
        raise ConfigurationError("[cross_l12] patterns live in different windows")
    w = parents.window
    sdm = cKDTree(parents.points).sparse_distance_matrix(cKDTree(children.points), float(r[-1]),
                                                         output_type="ndarray")
    if sdm.size:
        i = sdm["i"]
        j = sdm["j"]
        diff = parents.points[i] - children.points[j]
        dist = np.hypot(diff[:, 0], diff[:, 1])
        weights = 1.0 / _translation_area(w, diff[:, 0], diff[:, 1])
        k = w.area ** 2 / (n1 * n2) * _cumulative(dist, weights, r)
    else:
        k = np.zeros_like(r)
    return SummaryCurve("L12", r, _centred_l(k, r), "translate")


def kaplan_meier_cdf(observed: np.ndarray, censoring: np.ndarray, r: np.ndarray) -> np.ndarray:
    """Product-limit estimate of ``P(D <= r)`` from distances censored at *censoring*."""
    observed = np.asarray(observed, dtype=float)
    censoring = np.asarray(censoring, dtype=float)
    times = np.minimum(observed, censoring)
    events = observed <= censoring
    event_times, deaths = np.unique(times[events], return_counts=True)
    sorted_times = np.sort(times)
    at_risk = times.size - np.searchsorted(sorted_times, event_times, side="left")
    survival = np.cumprod(1.0 - deaths / at_risk)
    idx = np.searchsorted(event_times, r, side="right")
    surv_r = np.concatenate([[1.0], survival])[idx]
    return np.clip(1.0 - surv_r, 0.0, 1.0)


def lattice_points(window: Window, spacing: float) -> np.ndarray:
    if not spacing > 0:
        raise ConfigurationError(f"[lattice_points] spacing must be > 0, got {spacing}")
    xs = np.arange(window.x_min + 0.5 * spacing, window.x_max, spacing)
    ys = np.arange(window.y_min + 0.5 * spacing, window.y_max, spacing)
    gx, gy = np.meshgrid(xs, ys)
    return np.column_stack([gx.ravel(), gy.ravel()])


def empty_space_f(pattern: PointPattern, r_grid, eval_grid_spacing: float = DEFAULT_F_SPACING) -> SummaryCurve:
    """Kaplan-Meier ``F(r)``."""
    r = _check_grid(r_grid)
    if len(pattern) == 0:
        raise DataError("[empty_space_f] empty pattern")
    test = lattice_points(pattern.window, eval_grid_spacing)
    dist, _ = cKDTree(pattern.points).query(test)
    values = kaplan_meier_cdf(dist, pattern.window.boundary_distance(test), r)
    return SummaryCurve("F", r, values, "km", {"f_spacing": eval_grid_spacing})


def nn_distance_g(pattern: PointPattern, r_grid) -> SummaryCurve:
    """Kaplan-Meier ``G(r)``."""
    r = _check_grid(r_grid)
    n = len(pattern)
    if n < 2:
        raise DataError(f"[nn_distance_g] at least 2 points required, got {n}")
    dist, _ = cKDTree(pattern.points).query(pattern.points, k=2)
    values = kaplan_meier_cdf(dist[:, 1], pattern.window.boundary_distance(pattern.points), r)
    return SummaryCurve("G", r, values, "km")


def compute_statistic(statistic: str, children: PointPattern, r_grid, *, parents: PointPattern | None = None,
                      f_spacing: float = DEFAULT_F_SPACING) -> SummaryCurve:
    key = str(statistic).strip().upper()
    if key == "L":
        return l_function(children, r_grid)
    if key == "F":
        return empty_space_f(children, r_grid, f_spacing)
    if key == "G":
        return nn_distance_g(children, r_grid)
    if key == "L12":
        if parents is None:
            raise ConfigurationError("[compute_statistic] L12 needs the parent pattern")
        return cross_l12(parents, children, r_grid)
    raise ConfigurationError(f"[compute_statistic] unknown statistic '{statistic}' ({'|'.join(STATISTICS)})")


def compute_curves(statistic: str, patterns: Sequence[PointPattern], r_grid, *,
                   parents: PointPattern | None = None, f_spacing: float = DEFAULT_F_SPACING,
                   n_jobs: int = 1) -> list[SummaryCurve]:
    """*statistic* for every pattern, in input order."""
    jobs = (delayed(compute_statistic)(statistic, p, r_grid, parents=parents, f_spacing=f_spacing)
            for p in patterns)
    return list(Parallel(n_jobs=n_jobs)(jobs))


# ---------------------------------------------------------------------------
# ERL envelopes
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class EnvelopeResult:
    statistic: str
    r: np.ndarray
    lower: np.ndarray
    central: np.ndarray
    upper: np.ndarray
    data: np.ndarray
    level: float
    n_sims: int
    data_rank: int
    passed: bool

    @property
    def outside(self) -> np.ndarray:
        """Radii where the data curve leaves the envelope."""
        return self.r[(self.data < self.lower) | (self.data > self.upper)]


def extreme_rank_order(curves: np.ndarray) -> np.ndarray:
    """Curve indices from most to least extreme by extreme rank length.

    Pointwise two-sided extreme ranks are sorted ascending per curve and the
    sorted vectors compared lexicographically (smaller is more extreme);
    remaining ties go to the lower index.
    """
    curves = np.asarray(curves, dtype=float)
    low = rankdata(curves, method="max", axis=0)
    high = rankdata(-curves, method="max", axis=0)
    extreme = np.sort(np.minimum(low, high), axis=1)
    keys = [np.arange(curves.shape[0])] + [extreme[:, j] for j in range(extreme.shape[1] - 1, -1, -1)]
    return np.lexsort(keys)


def erl_envelope(data_curve: SummaryCurve, sim_curves: Sequence[SummaryCurve], level: float = 0.95) -> EnvelopeResult:
    """Global ERL envelope of *sim_curves* and the test of *data_curve* against it."""
    if not 0.0 < level < 1.0:
        raise ConfigurationError(f"[erl_envelope] level must lie in (0, 1), got {level}")
    s = len(sim_curves)
    if s < MIN_ENVELOPE_SIMS:
        raise ConfigurationError(f"[erl_envelope] at least {MIN_ENVELOPE_SIMS} simulated curves required, got {s}")
    for c in sim_curves:
        if c.r.shape != data_curve.r.shape or not np.array_equal(c.r, data_curve.r):
            raise ConfigurationError("[erl_envelope] simulated and data curves use different r grids")
    all_curves = np.vstack([data_curve.values] + [c.values for c in sim_curves])
    order = extreme_rank_order(all_curves)
    n_excluded = int(math.floor((1.0 - level) * (s + 1) + 1e-9))
    # the envelope covers every curve outside the excluded tail, the data curve included
    inside = all_curves[np.sort(order[n_excluded:])]
    lower = inside.min(axis=0)
    upper = inside.max(axis=0)
    central = np.sort(inside, axis=0)[(inside.shape[0] - 1) // 2]
    data = data_curve.values
    passed = bool(np.all((data >= lower) & (data <= upper)))
    data_rank = int(np.flatnonzero(order == 0)[0]) + 1
    return EnvelopeResult(data_curve.statistic, data_curve.r, lower, central, upper, data.copy(),
                          level, s, data_rank, passed)


def envelope_test(statistic: str, data: PointPattern, simulations: Sequence[PointPattern], r_grid, *,
                  parents: PointPattern | None = None, level: float = 0.95,
                  f_spacing: float = DEFAULT_F_SPACING, n_jobs: int = 1) -> EnvelopeResult:
    """Curves of the data and every simulated pattern, then :func:`erl_envelope`."""
    data_curve = compute_statistic(statistic, data, r_grid, parents=parents, f_spacing=f_spacing)
    sims = compute_curves(statistic, simulations, r_grid, parents=parents, f_spacing=f_spacing, n_jobs=n_jobs)
    result = erl_envelope(data_curve, sims, level)
    logger.info(f"[envelope_test] {data_curve.statistic}: {'pass' if result.passed else 'FAIL'} "
                f"(data rank {result.data_rank} of {len(sims) + 1})")
    return result


# ---------------------------------------------------------------------------
# Export
# ---------------------------------------------------------------------------

def write_curve(curve: SummaryCurve, path: str | Path, meta: Mapping | None = None) -> Path:
    header = {"statistic": curve.statistic, "estimator": curve.estimator, **curve.settings}
    header.update(meta or {})
    return write_table(path, ["r", "value"], np.column_stack([curve.r, curve.values]), header, fmt="%.12g")


def read_curve(path: str | Path) -> SummaryCurve:
    meta, columns, data = read_table(path)
    if columns != ["r", "value"]:
        raise DataError(f"[read_curve] expected columns r,value, got {','.join(columns)}", path=str(path))
    return SummaryCurve(meta.get("statistic", ""), data[:, 0], data[:, 1], meta.get("estimator", ""))


def write_envelope(result: EnvelopeResult, path: str | Path, meta: Mapping | None = None) -> Path:
    header = {"statistic": result.statistic, "n_sims": result.n_sims, "level": result.level,
              "data_rank": result.data_rank, "result": "pass" if result.passed else "fail"}
    header.update(meta or {})
    rows = np.column_stack([result.r, result.lower, result.central, result.upper, result.data])
    path = write_table(path, ["r", "lo", "central", "hi", "data"], rows, header, fmt="%.12g")
    logger.debug(f"[write_envelope] {path}")
    return path
