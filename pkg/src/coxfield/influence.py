"""Superposed influence field of a parent pattern on a grid.

The field at cell centre ``xi_g`` is ``sum_j k(|xi_g - x_j|, m_j)``. Each
parent only touches the cells within ``cutoff_sd`` effective ranges, so
evaluation cost is proportional to the number of parents times the local
patch size rather than to the whole grid.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping

import numpy as np
from robot.api import logger

from .errors import ConfigurationError, ModelConfigurationError
from .geometry import Grid, PointPattern
from .kernels.influence_kernel import InfluenceKernel, NoInfluence
from .utils.textio import read_matrix, write_matrix

DEFAULT_CUTOFF_SD = 5.0


@dataclass(frozen=True, eq=False)
class InfluenceField:
    grid: Grid
    values: np.ndarray
    kernel: InfluenceKernel
    edge_mode: str = "none"

    def __post_init__(self):
        vals = np.array(self.values, dtype=float).reshape(-1)
        if vals.shape[0] != self.grid.G:
            raise ConfigurationError(f"[InfluenceField] {vals.shape[0]} values for {self.grid.G} cells")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @property
    def matrix(self) -> np.ndarray:
        return self.grid.to_matrix(self.values)

    def plus(self, other: "InfluenceField", edge_mode: str) -> "InfluenceField":
        if other.grid != self.grid:
            raise ConfigurationError("[InfluenceField.plus] fields live on different grids")
        return InfluenceField(self.grid, self.values + other.values, self.kernel, edge_mode)

    @classmethod
    def zeros(cls, grid: Grid, kernel: InfluenceKernel, edge_mode: str = "none") -> "InfluenceField":
        return cls(grid, np.zeros(grid.G), kernel, edge_mode)


def kernel_value(kernel: InfluenceKernel, h: float, m: float | None = None) -> float:
    """Kernel value at distance *h* for mark *m*."""
    if h < 0:
        raise ConfigurationError(f"[kernel_value] distance must be >= 0, got {h}")
    if kernel.requires_marks and m is None:
        raise ModelConfigurationError(f"[kernel_value] {kernel.name} kernel needs a mark")
    return float(kernel.value(np.asarray(h, dtype=float), m))


def parent_marks(kernel: InfluenceKernel, parents: PointPattern) -> np.ndarray | None:
    if not kernel.requires_marks:
        return None
    if not parents.is_marked:
        raise ModelConfigurationError(f"[influence_field] {kernel.name} kernel needs a marked parent pattern")
    return parents.marks


def influence_field(kernel: InfluenceKernel, parents: PointPattern, grid: Grid,
                    cutoff_sd: float = DEFAULT_CUTOFF_SD, edge_mode: str = "none") -> InfluenceField:
    """Sum of all parents' kernels at the cell centres of *grid*.

    Parents may lie outside the grid window (plus sampling); only their
    patch overlapping the grid is evaluated. Summation runs over parents in
    pattern order.
    """
    if not cutoff_sd > 0:
        raise ConfigurationError(f"[influence_field] cutoff_sd must be > 0, got {cutoff_sd}")
    marks = parent_marks(kernel, parents)
    values = np.zeros(grid.shape)
    if isinstance(kernel, NoInfluence) or len(parents) == 0:
        return InfluenceField(grid, values, kernel, edge_mode)

    h = grid.cell_size
    x0, y0 = grid.window.x_min, grid.window.y_min
    xs = x0 + (np.arange(grid.n_x) + 0.5) * h
    ys = y0 + (np.arange(grid.n_y) + 0.5) * h
    radii = cutoff_sd * np.broadcast_to(kernel.effective_range(marks), (len(parents),))

    for j, (px, py) in enumerate(parents.points):
        r = float(radii[j])
        i_lo = max(0, math.ceil((px - r - x0) / h - 0.5))
        i_hi = min(grid.n_x, math.floor((px + r - x0) / h - 0.5) + 1)
        j_lo = max(0, math.ceil((py - r - y0) / h - 0.5))
        j_hi = min(grid.n_y, math.floor((py + r - y0) / h - 0.5) + 1)
        if i_lo >= i_hi or j_lo >= j_hi:
            continue
        d = np.hypot(ys[j_lo:j_hi, None] - py, xs[None, i_lo:i_hi] - px)
        contrib = kernel.value(d, None if marks is None else marks[j])
        contrib[d > r] = 0.0
        values[j_lo:j_hi, i_lo:i_hi] += contrib

    return InfluenceField(grid, values, kernel, edge_mode)


def reaches_window(kernel: InfluenceKernel, parents: PointPattern, grid: Grid,
                   cutoff_sd: float = DEFAULT_CUTOFF_SD) -> np.ndarray:
    """Mask of parents whose truncated kernel overlaps the grid window."""
    if len(parents) == 0 or isinstance(kernel, NoInfluence):
        return np.zeros(len(parents), dtype=bool)
    marks = parent_marks(kernel, parents)
    radii = cutoff_sd * np.broadcast_to(kernel.effective_range(marks), (len(parents),))
    w = grid.window
    p = parents.points
    dx = np.maximum.reduce([w.x_min - p[:, 0], np.zeros(len(p)), p[:, 0] - w.x_max])
    dy = np.maximum.reduce([w.y_min - p[:, 1], np.zeros(len(p)), p[:, 1] - w.y_max])
    return np.hypot(dx, dy) <= radii


def field_meta(field: InfluenceField, extra: Mapping[str, object] | None = None) -> dict:
    meta = {
        "window": list(field.grid.window.as_tuple()),
        "cell_size": field.grid.cell_size,
        "kernel": field.kernel.describe(),
        "edge_mode": field.edge_mode,
    }
    meta.update(extra or {})
    return meta


def write_field(field: InfluenceField, path: str | Path, meta: Mapping[str, object] | None = None) -> Path:
    """Write the field as an ``n_y x n_x`` matrix with a metadata header."""
    path = write_matrix(path, field.matrix, field_meta(field, meta))
    logger.debug(f"[write_field] {path}")
    return path


def read_field(path: str | Path) -> tuple[dict[str, str], np.ndarray]:
    return read_matrix(path)
