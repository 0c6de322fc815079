"""InfluenceKernel -- common interface of all influence kernels.

A kernel gives the influence of a parent point with mark ``m`` on a
location at distance ``h``. Field computation, edge correction and the
sampler only call the methods of this class; the concrete class decides
**how** the value is computed.

Custom isotropic kernels are plugged in with ``kernel: {class: package.module.Class}``
in the run configuration. Methods a subclass does not implement raise
``NotImplementedError``; ``cell_integrals`` has a numerical default
(Gauss-Legendre per cell).
"""
from __future__ import annotations

import numpy as np
from scipy.special import erf

from ..errors import ConfigurationError, ModelConfigurationError
from ..utils.loader import resolve_class
from ..utils.logging_mixin import LoggingMixin

# Nodes per axis of the generic cell quadrature.
_QUADRATURE_ORDER = 6


class InfluenceKernel(LoggingMixin):
    """Base class of all influence kernels."""

    #: Short name in configuration and exports.
    name = "abstract"
    #: Free parameters in sampler order (part of theta_I).
    param_names: tuple[str, ...] = ()
    #: True if the kernel needs parent marks.
    requires_marks = False

    def __init__(self, **params):
        unknown = sorted(set(params) - set(self.param_names))
        if unknown:
            raise ConfigurationError(f"[{self.__class__.__name__}] unknown parameter(s): {', '.join(unknown)}")
        missing = [p for p in self.param_names if p not in params]
        if missing:
            raise ConfigurationError(f"[{self.__class__.__name__}] missing parameter(s): {', '.join(missing)}")
        self.params = {p: float(params[p]) for p in self.param_names}
        self.validate()

    # ------------------------------------------------------------------
    # Parameters
    # ------------------------------------------------------------------
    def validate(self):
        """Checks the parameters; raises ``ConfigurationError``."""
        for p, v in self.params.items():
            if not np.isfinite(v):
                raise ConfigurationError(f"[{self.__class__.__name__}] {p} must be finite, got {v}")

    def with_values(self, **updates) -> "InfluenceKernel":
        """New kernel of the same class with updated parameters."""
        merged = dict(self.params)
        merged.update(updates)
        return self.__class__(**merged)

    @property
    def key(self) -> tuple:
        """Cache key (class and exact parameter values)."""
        cls = self.__class__
        return (f"{cls.__module__}.{cls.__qualname__}",) + tuple(self.params[p] for p in self.param_names)

    def __eq__(self, other):
        return isinstance(other, InfluenceKernel) and self.key == other.key

    def __hash__(self):
        return hash(self.key)

    def __repr__(self):
        args = ", ".join(f"{k}={v:g}" for k, v in self.params.items())
        return f"{self.__class__.__name__}({args})"

    def describe(self) -> dict:
        return {"variant": self.name, **self.params}

    # ------------------------------------------------------------------
    # Evaluation
    # ------------------------------------------------------------------
    def value(self, h, m=None) -> np.ndarray:
        """Kernel value at distance ``h`` (array) for mark ``m``."""
        raise NotImplementedError(f"{self.__class__.__name__}.value()")

    def effective_range(self, m=None) -> np.ndarray:
        """Range the truncation radius is measured in."""
        raise NotImplementedError(f"{self.__class__.__name__}.effective_range()")

    def cell_integrals(self, offsets_x: np.ndarray, offsets_y: np.ndarray, cell_size: float,
                       marks: np.ndarray | None = None) -> np.ndarray:
        """Integral of the kernel (averaged over marks) over cells.

        The result has shape ``(len(offsets_y), len(offsets_x))``; entry
        ``[b, a]`` is the integral over the cell of side
        ``cell_size`` centred at ``(offsets_x[a], offsets_y[b])``.
        """
        nodes, weights = np.polynomial.legendre.leggauss(_QUADRATURE_ORDER)
        half = 0.5 * cell_size
        ox = np.asarray(offsets_x, dtype=float)
        oy = np.asarray(offsets_y, dtype=float)
        out = np.zeros((oy.size, ox.size))
        marks_u, counts = self._mark_groups(marks)
        for m, c in zip(marks_u, counts):
            acc = np.zeros_like(out)
            for u, wu in zip(nodes, weights):
                for v, wv in zip(nodes, weights):
                    d = np.hypot(oy[:, None] + half * v, ox[None, :] + half * u)
                    acc += wu * wv * self.value(d, m)
            out += c * acc * half * half
        return out / counts.sum()

    def _mark_groups(self, marks):
        if marks is None or not self.requires_marks:
            if self.requires_marks:
                raise ModelConfigurationError(f"[{self.__class__.__name__}] marks required")
            return [None], np.array([1])
        marks_u, counts = np.unique(np.asarray(marks, dtype=float), return_counts=True)
        return list(marks_u), counts

    def _check_mark(self, m):
        if m is None:
            raise ModelConfigurationError(f"[{self.__class__.__name__}] kernel is mark-dependent but no mark given")
        m = np.asarray(m, dtype=float)
        if np.any(~(m > 0)):
            raise ModelConfigurationError(f"[{self.__class__.__name__}] marks must be positive")
        return m


class NoInfluence(InfluenceKernel):
    """Model without influence field (C = 0)."""

    name = "none"

    def value(self, h, m=None):
        return np.zeros_like(np.asarray(h, dtype=float))

    def effective_range(self, m=None):
        return np.zeros_like(np.asarray(1.0 if m is None else m, dtype=float))

    def cell_integrals(self, offsets_x, offsets_y, cell_size, marks=None):
        return np.zeros((len(offsets_y), len(offsets_x)))


class _GaussianFamily(InfluenceKernel):
    """``amplitude(m) * exp(-(h / scale(m))**2)`` with closed-form cell integrals."""

    def validate(self):
        super().validate()
        if not self.params["theta"] > 0:
            raise ConfigurationError(f"[{self.__class__.__name__}] theta must be > 0, got {self.params['theta']}")
        if "delta" in self.params and not self.params["delta"] > 0:
            raise ConfigurationError(f"[{self.__class__.__name__}] delta must be > 0, got {self.params['delta']}")
        if "alpha" in self.params and not self.params["alpha"] >= 0:
            raise ConfigurationError(f"[{self.__class__.__name__}] alpha must be >= 0, got {self.params['alpha']}")

    def amplitude(self, m):
        return np.ones_like(np.asarray(1.0 if m is None else m, dtype=float))

    def scale(self, m):
        return self.params["theta"] * np.ones_like(np.asarray(1.0 if m is None else m, dtype=float))

    def value(self, h, m=None):
        if self.requires_marks:
            m = self._check_mark(m)
        h = np.asarray(h, dtype=float)
        return self.amplitude(m) * np.exp(-(h / self.scale(m)) ** 2)

    def effective_range(self, m=None):
        if self.requires_marks:
            m = self._check_mark(m)
        return self.scale(m)

    def cell_integrals(self, offsets_x, offsets_y, cell_size, marks=None):
        ox = np.asarray(offsets_x, dtype=float)
        oy = np.asarray(offsets_y, dtype=float)
        half = 0.5 * cell_size
        out = np.zeros((oy.size, ox.size))
        marks_u, counts = self._mark_groups(marks)
        for m, c in zip(marks_u, counts):
            s = float(self.scale(m))
            ex = erf((ox + half) / s) - erf((ox - half) / s)
            ey = erf((oy + half) / s) - erf((oy - half) / s)
            out += c * float(self.amplitude(m)) * (np.pi * s * s / 4.0) * np.outer(ey, ex)
        return out / counts.sum()


class GaussianKernel(_GaussianFamily):
    """Mark-free kernel ``exp(-(h/theta)^2)``."""

    name = "gaussian"
    param_names = ("theta",)


class MarkRangeKernel(_GaussianFamily):
    """Range scales with ``m^delta``; strength does not depend on the mark."""

    name = "mark_range"
    param_names = ("theta", "delta")
    requires_marks = True

    def scale(self, m):
        return self.params["theta"] * np.asarray(m, dtype=float) ** self.params["delta"]


class MarkStrengthKernel(_GaussianFamily):
    """Strength ``m^alpha``; range does not depend on the mark."""

    name = "mark_strength"
    param_names = ("theta", "alpha")
    requires_marks = True

    def amplitude(self, m):
        return np.asarray(m, dtype=float) ** self.params["alpha"]


class MarkFullKernel(_GaussianFamily):
    """``m^alpha * exp(-(h / (theta * m^delta))^2)``."""

    name = "mark_full"
    param_names = ("theta", "delta", "alpha")
    requires_marks = True

    def amplitude(self, m):
        return np.asarray(m, dtype=float) ** self.params["alpha"]

    def scale(self, m):
        return self.params["theta"] * np.asarray(m, dtype=float) ** self.params["delta"]


KERNELS: dict[str, type[InfluenceKernel]] = {
    cls.name: cls for cls in (NoInfluence, GaussianKernel, MarkRangeKernel, MarkStrengthKernel, MarkFullKernel)
}


def kernel_class(name: str) -> type[InfluenceKernel]:
    """Resolve a short name (``gaussian``) or a class path."""
    return resolve_class(name, KERNELS, InfluenceKernel)


def kernel_from_config(entry) -> InfluenceKernel:
    """Build a kernel from a configuration entry.

    Accepts a short name (``"none"``) or a mapping with ``name``
    or ``class`` and the parameters.
    """
    if isinstance(entry, str):
        return kernel_class(entry)()
    if not isinstance(entry, dict):
        raise ConfigurationError(f"[kernel_from_config] kernel entry must be a name or mapping, got {entry!r}")
    params = dict(entry)
    name = params.pop("class", None) or params.pop("name", None)
    params.pop("name", None)
    if name is None:
        raise ConfigurationError("[kernel_from_config] kernel entry needs 'name' or 'class'")
    return kernel_class(name)(**params)
