"""Edge correction for parents outside the observation window.

Three modes are supported:

``NoCorrection``
    Only the observed parents contribute.
``PoissonCorrection``
    The unobserved exterior parents are replaced by their expected
    influence under an independently marked homogeneous Poisson process
    with intensity ``lambda`` and the plot's empirical mark distribution.
    By Campbell's theorem the exterior load at ``s`` is
    ``lambda * (total - (f * 1_W)(s))`` with ``total = 2 pi int r f(r) dr``.
``PlusSampling``
    The parent pattern is known on an extended window; every parent whose
    truncated kernel reaches the window contributes.

The convolution uses the kernel integrated over each cell, so for a
rectangular window it agrees with the exact integral at every cell centre
up to the truncation of ``f`` at ten effective ranges.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from robot.api import logger
from scipy import integrate
from scipy.signal import fftconvolve
from scipy.special import erf

from .errors import ConfigurationError, ModelConfigurationError, NumericError
from .geometry import Grid, PointPattern, Window
from .influence import DEFAULT_CUTOFF_SD, InfluenceField, influence_field, parent_marks, reaches_window
from .kernels.influence_kernel import InfluenceKernel, NoInfluence

# Radial integral and FFT support extend to this many effective ranges.
_SUPPORT_RANGES = 10.0
_EXTERIOR_CACHE_SIZE = 64


@dataclass(frozen=True)
class MarkDistribution:
    """Empirical mark distribution of one plot (``(1.0,)`` when unmarked)."""

    marks: tuple[float, ...] = (1.0,)

    def __post_init__(self):
        marks = tuple(float(m) for m in self.marks)
        if not marks:
            raise ConfigurationError("[MarkDistribution] at least one mark required")
        if any(not (m > 0 and math.isfinite(m)) for m in marks):
            raise ConfigurationError("[MarkDistribution] marks must be positive and finite")
        object.__setattr__(self, "marks", marks)

    @classmethod
    def from_pattern(cls, pattern: PointPattern) -> "MarkDistribution":
        if not pattern.is_marked or len(pattern) == 0:
            return cls()
        return cls(tuple(pattern.marks.tolist()))

    def as_array(self) -> np.ndarray:
        return np.asarray(self.marks, dtype=float)


@dataclass(frozen=True)
class NoCorrection:
    name = "none"


@dataclass(frozen=True)
class PoissonCorrection:
    intensity: float
    markdist: MarkDistribution = MarkDistribution()
    name = "poisson"

    def __post_init__(self):
        if not (self.intensity > 0 and math.isfinite(self.intensity)):
            raise ConfigurationError(f"[PoissonCorrection] intensity must be > 0, got {self.intensity}")

    @classmethod
    def estimated(cls, parents: PointPattern, intensity: float | None = None) -> "PoissonCorrection":
        """Mode with ``lambda = n / |W|`` unless *intensity* is given."""
        lam = intensity if intensity is not None else parents.intensity
        if not lam > 0:
            raise ConfigurationError("[PoissonCorrection] cannot estimate intensity from an empty parent pattern")
        return cls(float(lam), MarkDistribution.from_pattern(parents))


@dataclass(frozen=True, eq=False)
class PlusSampling:
    extended_parents: PointPattern
    extended_window: Window
    name = "plus"

    def validate_for(self, window: Window):
        if not self.extended_window.strictly_contains(window):
            raise ConfigurationError("[PlusSampling] extended window must strictly contain the observation window")


EdgeCorrectionMode = NoCorrection | PoissonCorrection | PlusSampling


def mean_kernel(kernel: InfluenceKernel, markdist: MarkDistribution):
    """``f(r)``: the kernel averaged over the mark distribution."""
    marks = markdist.as_array() if kernel.requires_marks else None

    def f(r):
        if marks is None:
            return kernel.value(np.asarray(r, dtype=float))
        return float(np.mean(kernel.value(np.full(marks.shape, r, dtype=float), marks)))
    return f


def max_effective_range(kernel: InfluenceKernel, markdist: MarkDistribution) -> float:
    marks = markdist.as_array() if kernel.requires_marks else None
    return float(np.max(kernel.effective_range(marks)))


def radial_total_integral(kernel: InfluenceKernel, markdist: MarkDistribution) -> float:
    """``2 pi int_0^inf r f(r) dr`` by adaptive quadrature."""
    if isinstance(kernel, NoInfluence):
        raise ModelConfigurationError("[radial_total_integral] not defined for the no-influence model")
    f = mean_kernel(kernel, markdist)
    upper = _SUPPORT_RANGES * max_effective_range(kernel, markdist)
    if upper <= 0:
        return 0.0
    value, _err = integrate.quad(lambda r: r * float(f(r)), 0.0, upper, epsabs=1e-10, epsrel=1e-10, limit=200)
    total = 2.0 * math.pi * value
    if not math.isfinite(total):
        raise NumericError(f"[radial_total_integral] non-finite integral for {kernel!r}")
    return total


def _support_cells(extent: float, n: int, cell_size: float) -> int:
    return min(n - 1, int(math.ceil(extent / cell_size)))


@lru_cache(maxsize=_EXTERIOR_CACHE_SIZE)
def _exterior_values(kernel: InfluenceKernel, intensity: float, markdist: MarkDistribution, grid: Grid) -> np.ndarray:
    h = grid.cell_size
    total = radial_total_integral(kernel, markdist)
    reach = _SUPPORT_RANGES * max_effective_range(kernel, markdist)
    kx = _support_cells(reach, grid.n_x, h)
    ky = _support_cells(reach, grid.n_y, h)
    offsets_x = np.arange(-kx, kx + 1) * h
    offsets_y = np.arange(-ky, ky + 1) * h
    marks = markdist.as_array() if kernel.requires_marks else None
    cell_kernel = kernel.cell_integrals(offsets_x, offsets_y, h, marks)
    # fftconvolve zero-pads the indicator by (ky, kx) cells, so no wrap-around
    full = fftconvolve(np.ones(grid.shape), cell_kernel, mode="full")
    inside = full[ky:ky + grid.n_y, kx:kx + grid.n_x]
    values = intensity * (total - inside)
    if not np.all(np.isfinite(values)):
        raise NumericError(f"[expected_exterior_field] non-finite exterior field for {kernel!r}")
    values = np.maximum(values, 0.0).reshape(-1)
    values.setflags(write=False)
    return values


def expected_exterior_field(kernel: InfluenceKernel, intensity: float, markdist: MarkDistribution,
                            grid: Grid) -> InfluenceField:
    """Expected influence of exterior Poisson parents at every cell centre.

    Results are cached on ``(kernel parameters, intensity, marks, grid)``;
    identical inputs return the identical array.
    """
    if not intensity > 0:
        raise ConfigurationError(f"[expected_exterior_field] intensity must be > 0, got {intensity}")
    if isinstance(kernel, NoInfluence):
        return InfluenceField.zeros(grid, kernel, "poisson")
    values = _exterior_values(kernel, float(intensity), markdist, grid)
    return InfluenceField(grid, values, kernel, "poisson")


def exterior_cache_clear():
    _exterior_values.cache_clear()


def gaussian_exterior_closed_form(theta: float, intensity: float, grid: Grid) -> np.ndarray:
    """Exact exterior load of the unmarked Gaussian kernel on a rectangle.

    ``lambda * (pi theta^2 - pi theta^2 / 4 * Ex * Ey)`` with the error
    function products over both axes.
    """
    c = grid.centers
    w = grid.window
    ex = erf((w.x_max - c[:, 0]) / theta) + erf((c[:, 0] - w.x_min) / theta)
    ey = erf((w.y_max - c[:, 1]) / theta) + erf((c[:, 1] - w.y_min) / theta)
    full = math.pi * theta * theta
    return intensity * (full - full / 4.0 * ex * ey)


def corrected_field(kernel: InfluenceKernel, parents: PointPattern, grid: Grid,
                    mode: EdgeCorrectionMode, cutoff_sd: float = DEFAULT_CUTOFF_SD) -> InfluenceField:
    """Observed influence plus the contribution of unobserved parents."""
    parent_marks(kernel, parents)
    if isinstance(mode, NoCorrection):
        return influence_field(kernel, parents, grid, cutoff_sd, edge_mode="none")
    if isinstance(mode, PoissonCorrection):
        observed = influence_field(kernel, parents, grid, cutoff_sd)
        exterior = expected_exterior_field(kernel, mode.intensity, mode.markdist, grid)
        return observed.plus(exterior, "poisson")
    if isinstance(mode, PlusSampling):
        mode.validate_for(grid.window)
        ext = mode.extended_parents
        parent_marks(kernel, ext)
        mask = reaches_window(kernel, ext, grid, cutoff_sd)
        marks = ext.marks[mask] if ext.is_marked else None
        reaching = PointPattern(ext.points[mask], mode.extended_window, marks, check_window=False)
        logger.debug(f"[corrected_field] plus sampling: {int(mask.sum())} of {len(ext)} parents reach the window")
        return influence_field(kernel, reaching, grid, cutoff_sd, edge_mode="plus")
    raise ConfigurationError(f"[corrected_field] unknown edge mode {mode!r}")


def exterior_parents(mode: PlusSampling, window: Window) -> PointPattern:
    """Parents of the extended pattern lying outside *window*."""
    ext = mode.extended_parents
    outside = ~window.contains(ext.points)
    marks = ext.marks[outside] if ext.is_marked else None
    return PointPattern(ext.points[outside], mode.extended_window, marks, check_window=False)


def realized_exterior_field(kernel: InfluenceKernel, mode: PlusSampling, grid: Grid,
                            cutoff_sd: float = DEFAULT_CUTOFF_SD) -> InfluenceField:
    """Influence of the actual unobserved parents (plus minus observed)."""
    mode.validate_for(grid.window)
    return influence_field(kernel, exterior_parents(mode, grid.window), grid, cutoff_sd, edge_mode="exterior")


def make_mode(name: str, parents: PointPattern, *, intensity: float | None = None,
              extended_parents: PointPattern | None = None,
              extended_window: Window | None = None) -> EdgeCorrectionMode:
    """Build an edge mode from its configuration name."""
    key = str(name).strip().lower()
    if key == "none":
        return NoCorrection()
    if key == "poisson":
        return PoissonCorrection.estimated(parents, intensity)
    if key == "plus":
        if extended_parents is None or extended_window is None:
            raise ConfigurationError("[make_mode] plus sampling needs extended parents and an extended window")
        return PlusSampling(extended_parents, extended_window)
    raise ConfigurationError(f"[make_mode] unknown edge mode '{name}' (none|poisson|plus)")
