"""Windows, point patterns and regular-grid discretisation.

Cell ordering is row-major over ``(j, i)``: cell ``g = j * n_x + i`` has
x-index ``i`` and y-index ``j`` and centre
``(x_min + (i + 0.5) * h, y_min + (j + 0.5) * h)``. Field matrices are
therefore ``values.reshape(n_y, n_x)``. The GMRF stencil and the FFT
convolution both rely on this layout.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

from .errors import ConfigurationError, DataError
from .utils.textio import meta_lines

# Relative tolerance for "window is a multiple of the cell size".
_DIVISIBILITY_RTOL = 1e-9


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class Window:
    """Axis-aligned rectangle ``[x_min, x_max] x [y_min, y_max]`` in metres."""

    x_min: float
    x_max: float
    y_min: float
    y_max: float

    def __post_init__(self):
        if not (self.x_min < self.x_max):
            raise ConfigurationError(f"[Window] x_min < x_max required, got {self.x_min}, {self.x_max}")
        if not (self.y_min < self.y_max):
            raise ConfigurationError(f"[Window] y_min < y_max required, got {self.y_min}, {self.y_max}")

    @classmethod
    def from_sequence(cls, values) -> "Window":
        vals = [float(v) for v in values]
        if len(vals) != 4:
            raise ConfigurationError(f"[Window] expected x_min,x_max,y_min,y_max, got {values!r}")
        return cls(*vals)

    @property
    def width(self) -> float:
        return self.x_max - self.x_min

    @property
    def height(self) -> float:
        return self.y_max - self.y_min

    @property
    def area(self) -> float:
        return self.width * self.height

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.x_min, self.x_max, self.y_min, self.y_max)

    def contains(self, points: np.ndarray) -> np.ndarray:
        """Boolean mask of points inside the closed rectangle."""
        p = np.asarray(points, dtype=float).reshape(-1, 2)
        return ((p[:, 0] >= self.x_min) & (p[:, 0] <= self.x_max)
                & (p[:, 1] >= self.y_min) & (p[:, 1] <= self.y_max))

    def strictly_contains(self, other: "Window") -> bool:
        return (self.x_min < other.x_min and self.x_max > other.x_max
                and self.y_min < other.y_min and self.y_max > other.y_max)

    def expanded(self, margin: float) -> "Window":
        return Window(self.x_min - margin, self.x_max + margin, self.y_min - margin, self.y_max + margin)

    def boundary_distance(self, points: np.ndarray) -> np.ndarray:
        """Distance from each point to the window boundary (0 outside)."""
        p = np.asarray(points, dtype=float).reshape(-1, 2)
        d = np.minimum.reduce([p[:, 0] - self.x_min, self.x_max - p[:, 0],
                               p[:, 1] - self.y_min, self.y_max - p[:, 1]])
        return np.maximum(d, 0.0)


@dataclass(frozen=True, eq=False)
class PointPattern:
    """Locations (and optional positive marks) inside a window."""

    points: np.ndarray
    window: Window
    marks: np.ndarray | None = None
    check_window: bool = field(default=True, repr=False)

    def __post_init__(self):
        pts = np.array(self.points, dtype=float).reshape(-1, 2)
        object.__setattr__(self, "points", _frozen(pts))
        if self.marks is not None:
            marks = np.array(self.marks, dtype=float).reshape(-1)
            if marks.shape[0] != pts.shape[0]:
                raise DataError(f"[PointPattern] {marks.shape[0]} marks for {pts.shape[0]} points")
            bad = np.flatnonzero(~(marks > 0))
            if bad.size:
                raise DataError(f"[PointPattern] mark of point {int(bad[0])} is not positive", index=int(bad[0]))
            object.__setattr__(self, "marks", _frozen(marks))
        if self.check_window and pts.shape[0]:
            outside = np.flatnonzero(~self.window.contains(pts))
            if outside.size:
                k = int(outside[0])
                raise DataError(f"[PointPattern] point {k} at ({pts[k, 0]:g}, {pts[k, 1]:g}) outside window",
                                index=k)

    def __len__(self) -> int:
        return int(self.points.shape[0])

    @property
    def is_marked(self) -> bool:
        return self.marks is not None

    @property
    def intensity(self) -> float:
        return len(self) / self.window.area

    @classmethod
    def empty(cls, window: Window, marked: bool = False) -> "PointPattern":
        return cls(np.zeros((0, 2)), window, np.zeros(0) if marked else None)

    def restricted(self, window: Window) -> "PointPattern":
        """Points falling inside *window*, re-labelled to that window."""
        mask = window.contains(self.points)
        marks = self.marks[mask] if self.marks is not None else None
        return PointPattern(self.points[mask], window, marks)

    def union(self, other: "PointPattern") -> "PointPattern":
        if self.is_marked != other.is_marked:
            raise DataError("[PointPattern.union] cannot combine marked and unmarked patterns")
        marks = np.concatenate([self.marks, other.marks]) if self.is_marked else None
        return PointPattern(np.vstack([self.points, other.points]), self.window, marks, check_window=False)

    def translated(self, dx: float, dy: float) -> "PointPattern":
        w = Window(self.window.x_min + dx, self.window.x_max + dx, self.window.y_min + dy, self.window.y_max + dy)
        return PointPattern(self.points + [dx, dy], w, self.marks)

    def scaled(self, c: float) -> "PointPattern":
        w = Window(*(c * v for v in self.window.as_tuple()))
        return PointPattern(self.points * c, w, self.marks)


@dataclass(frozen=True)
class Grid:
    """Regular discretisation of a window into square cells."""

    window: Window
    cell_size: float
    n_x: int
    n_y: int

    @property
    def G(self) -> int:
        return self.n_x * self.n_y

    @property
    def cell_area(self) -> float:
        return self.cell_size ** 2

    @property
    def shape(self) -> tuple[int, int]:
        """Matrix shape ``(n_y, n_x)``."""
        return (self.n_y, self.n_x)

    @property
    def centers(self) -> np.ndarray:
        h = self.cell_size
        xs = self.window.x_min + (np.arange(self.n_x) + 0.5) * h
        ys = self.window.y_min + (np.arange(self.n_y) + 0.5) * h
        gx, gy = np.meshgrid(xs, ys)
        return np.column_stack([gx.ravel(), gy.ravel()])

    def cell_bounds(self, g: int) -> tuple[float, float, float, float]:
        j, i = divmod(int(g), self.n_x)
        h = self.cell_size
        x0 = self.window.x_min + i * h
        y0 = self.window.y_min + j * h
        return (x0, x0 + h, y0, y0 + h)

    def cell_index(self, points: np.ndarray) -> np.ndarray:
        """Cell index of each point; interior boundaries go to the upper cell."""
        p = np.asarray(points, dtype=float).reshape(-1, 2)
        h = self.cell_size
        # rounding absorbs representation error such as 0.3 / 0.1 = 2.9999999999999996
        i = np.floor(np.round((p[:, 0] - self.window.x_min) / h, 9)).astype(int)
        j = np.floor(np.round((p[:, 1] - self.window.y_min) / h, 9)).astype(int)
        i = np.clip(i, 0, self.n_x - 1)
        j = np.clip(j, 0, self.n_y - 1)
        return j * self.n_x + i

    def to_matrix(self, values: np.ndarray) -> np.ndarray:
        return np.asarray(values).reshape(self.n_y, self.n_x)

    def padded(self, cells: int) -> "Grid":
        """The grid extended by *cells* cells on every side."""
        margin = cells * self.cell_size
        return Grid(self.window.expanded(margin), self.cell_size, self.n_x + 2 * cells, self.n_y + 2 * cells)

    def interior_index(self, cells: int) -> np.ndarray:
        """Indices of this grid's cells inside ``self.padded(cells)``."""
        n_x_ext = self.n_x + 2 * cells
        jj, ii = np.meshgrid(np.arange(self.n_y) + cells, np.arange(self.n_x) + cells, indexing="ij")
        return (jj * n_x_ext + ii).ravel()

    def describe(self) -> dict:
        return {"window": list(self.window.as_tuple()), "cell_size": self.cell_size,
                "n_x": self.n_x, "n_y": self.n_y}


@dataclass(frozen=True, eq=False)
class CountGrid:
    grid: Grid
    counts: np.ndarray

    def __post_init__(self):
        counts = np.array(self.counts, dtype=np.int64).reshape(-1)
        if counts.shape[0] != self.grid.G:
            raise DataError(f"[CountGrid] {counts.shape[0]} counts for {self.grid.G} cells")
        if np.any(counts < 0):
            raise DataError("[CountGrid] negative count")
        object.__setattr__(self, "counts", _frozen(counts))

    @property
    def total(self) -> int:
        return int(self.counts.sum())


def _cells_along(length: float, cell_size: float, axis: str) -> int:
    ratio = length / cell_size
    n = int(round(ratio))
    if n < 1 or abs(ratio - n) > _DIVISIBILITY_RTOL * max(ratio, 1.0):
        raise ConfigurationError(
            f"[discretize] window {axis}-extent {length:g} is not an integer multiple of cell size {cell_size:g}"
        )
    return n


def discretize(window: Window, cell_size: float) -> Grid:
    """Divide *window* into square cells of side *cell_size*."""
    if not cell_size > 0:
        raise ConfigurationError(f"[discretize] cell size must be positive, got {cell_size}")
    n_x = _cells_along(window.width, cell_size, "x")
    n_y = _cells_along(window.height, cell_size, "y")
    return Grid(window, float(cell_size), n_x, n_y)


def bin_points(pattern: PointPattern, grid: Grid) -> CountGrid:
    """Per-cell counts of the pattern's points."""
    if len(pattern) == 0:
        return CountGrid(grid, np.zeros(grid.G, dtype=np.int64))
    outside = np.flatnonzero(~grid.window.contains(pattern.points))
    if outside.size:
        k = int(outside[0])
        raise DataError(f"[bin_points] point {k} at ({pattern.points[k, 0]:g}, {pattern.points[k, 1]:g}) "
                        f"outside grid window", index=k)
    counts = np.bincount(grid.cell_index(pattern.points), minlength=grid.G)
    return CountGrid(grid, counts)


# ---------------------------------------------------------------------------
# Pattern files
# ---------------------------------------------------------------------------

def read_pattern(path: str | Path, window: Window) -> PointPattern:
    """Read ``x,y`` or ``x,y,mark`` delimited text; comment lines start with '#'."""
    path = Path(path)
    if not path.is_file():
        raise DataError("[read_pattern] file not found", path=str(path))
    rows: list[list[float]] = []
    header: list[str] | None = None
    with open(path, "r", encoding="utf-8", newline="") as fh:
        for lineno, record in enumerate(csv.reader(fh), start=1):
            if not record or record[0].lstrip().startswith("#"):
                continue
            cells = [c.strip() for c in record]
            if header is None:
                header = [c.lower() for c in cells]
                if header not in (["x", "y"], ["x", "y", "mark"]):
                    raise DataError(f"[read_pattern] header must be 'x,y' or 'x,y,mark', got {','.join(cells)}",
                                    path=str(path), line=lineno)
                continue
            if len(cells) != len(header):
                raise DataError(f"[read_pattern] expected {len(header)} fields, got {len(cells)}",
                                path=str(path), line=lineno)
            try:
                values = [float(c) for c in cells]
            except ValueError as e:
                raise DataError(f"[read_pattern] non-numeric field: {e}", path=str(path), line=lineno) from e
            if not all(math.isfinite(v) for v in values):
                raise DataError("[read_pattern] non-finite value", path=str(path), line=lineno)
            if len(values) == 3 and values[2] <= 0:
                raise DataError("[read_pattern] mark must be positive", path=str(path), line=lineno)
            if not window.contains(np.array(values[:2]))[0]:
                raise DataError(f"[read_pattern] point ({values[0]:g}, {values[1]:g}) outside window",
                                path=str(path), line=lineno, index=len(rows))
            rows.append(values)
    if header is None:
        raise DataError("[read_pattern] missing header line", path=str(path))
    arr = np.asarray(rows, dtype=float).reshape(-1, len(header))
    marks = arr[:, 2] if len(header) == 3 else None
    return PointPattern(arr[:, :2], window, marks)


def write_pattern(pattern: PointPattern, path: str | Path, meta: Mapping[str, object] | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        for line in meta_lines(meta):
            fh.write(line + "\n")
        writer = csv.writer(fh, lineterminator="\n")
        if pattern.is_marked:
            writer.writerow(["x", "y", "mark"])
            for (x, y), m in zip(pattern.points, pattern.marks):
                writer.writerow([repr(float(x)), repr(float(y)), repr(float(m))])
        else:
            writer.writerow(["x", "y"])
            for x, y in pattern.points:
                writer.writerow([repr(float(x)), repr(float(y))])
    return path
