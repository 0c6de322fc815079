"""Independent priors on the original parameter scale.

Defaults are weakly informative: ``N(0, 10^2)`` for intercepts and the
influence coefficient, ``Gamma(shape 2.4, scale 1.8)`` for the kernel range
and the field range (90 % of the mass between 1 m and 10 m), and
exponentials with mean 10 for the field standard deviation and the mark
exponents.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, fields
from typing import TYPE_CHECKING, Mapping

from scipy import stats

from .errors import ConfigurationError

if TYPE_CHECKING:  # pragma: no cover
    from .likelihood import ModelParams


@dataclass(frozen=True)
class Normal:
    mean: float = 0.0
    sd: float = 10.0
    family = "normal"

    def __post_init__(self):
        if not self.sd > 0:
            raise ConfigurationError(f"[Normal] sd must be > 0, got {self.sd}")

    def logpdf(self, x: float) -> float:
        return float(stats.norm.logpdf(x, loc=self.mean, scale=self.sd))

    def sample(self, rng):
        return float(rng.normal(self.mean, self.sd))


@dataclass(frozen=True)
class Gamma:
    shape: float = 2.4
    scale: float = 1.8
    family = "gamma"

    def __post_init__(self):
        if not (self.shape > 0 and self.scale > 0):
            raise ConfigurationError(f"[Gamma] shape and scale must be > 0, got {self.shape}, {self.scale}")

    def logpdf(self, x: float) -> float:
        if not x > 0:
            return -math.inf
        return float(stats.gamma.logpdf(x, self.shape, scale=self.scale))

    def sample(self, rng):
        return float(rng.gamma(self.shape, self.scale))


@dataclass(frozen=True)
class Exponential:
    mean: float = 10.0
    family = "exponential"

    def __post_init__(self):
        if not self.mean > 0:
            raise ConfigurationError(f"[Exponential] mean must be > 0, got {self.mean}")

    def logpdf(self, x: float) -> float:
        if not x >= 0:
            return -math.inf
        return float(stats.expon.logpdf(x, scale=self.mean))

    def sample(self, rng):
        return float(rng.exponential(self.mean))


@dataclass(frozen=True)
class Flat:
    """Improper flat prior on the parameter's support (zero log density)."""

    positive: bool = False
    family = "flat"

    def logpdf(self, x: float) -> float:
        if self.positive and not x > 0:
            return -math.inf
        return 0.0


PRIOR_FAMILIES = {cls.family: cls for cls in (Normal, Gamma, Exponential, Flat)}


def prior_from_config(entry) -> Normal | Gamma | Exponential | Flat:
    if not isinstance(entry, Mapping) or "family" not in entry:
        raise ConfigurationError(f"[prior_from_config] prior must be a mapping with 'family', got {entry!r}")
    params = dict(entry)
    family = str(params.pop("family")).lower()
    cls = PRIOR_FAMILIES.get(family)
    if cls is None:
        raise ConfigurationError(f"[prior_from_config] unknown prior family '{family}'")
    try:
        return cls(**{k: float(v) if k != "positive" else bool(v) for k, v in params.items()})
    except TypeError as e:
        raise ConfigurationError(f"[prior_from_config] {family}: {e}") from e


@dataclass(frozen=True)
class PriorSpec:
    """Prior per parameter group; all intercepts share ``beta0``."""

    beta0: Normal | Flat = field(default_factory=Normal)
    beta1: Normal | Flat = field(default_factory=Normal)
    theta: Gamma | Exponential | Flat = field(default_factory=Gamma)
    delta: Exponential | Gamma | Flat = field(default_factory=Exponential)
    alpha: Exponential | Gamma | Flat = field(default_factory=Exponential)
    sigmaZ: Exponential | Gamma | Flat = field(default_factory=Exponential)
    rhoZ: Gamma | Exponential | Flat = field(default_factory=Gamma)

    @classmethod
    def from_mapping(cls, mapping: Mapping | None) -> "PriorSpec":
        mapping = dict(mapping or {})
        names = {f.name for f in fields(cls)}
        unknown = sorted(set(mapping) - names)
        if unknown:
            raise ConfigurationError(f"[PriorSpec] unknown prior key(s): {', '.join(unknown)}")
        return cls(**{k: prior_from_config(v) for k, v in mapping.items()})

    @classmethod
    def flat(cls) -> "PriorSpec":
        pos = Flat(positive=True)
        return cls(Flat(), Flat(), pos, pos, pos, pos, pos)

    def for_parameter(self, name: str):
        if name.startswith("beta0"):
            return self.beta0
        try:
            return getattr(self, name)
        except AttributeError:
            raise ConfigurationError(f"[PriorSpec] no prior for parameter '{name}'") from None

    def describe(self) -> dict:
        return {f.name: {"family": getattr(self, f.name).family,
                         **{k: v for k, v in vars(getattr(self, f.name)).items()}}
                for f in fields(self)}


def log_prior(params: "ModelParams | Mapping[str, float]", priors: PriorSpec) -> float:
    """Sum of the independent prior log densities; ``-inf`` outside the support."""
    values = params if isinstance(params, Mapping) else params.named_values()
    total = 0.0
    for name, value in values.items():
        lp = priors.for_parameter(name).logpdf(float(value))
        if not math.isfinite(lp):
            return -math.inf
        total += lp
    return total
