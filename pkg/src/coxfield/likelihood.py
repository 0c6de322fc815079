"""Discretised Poisson likelihood with a Laplace-approximated latent field.

For replicate ``k`` and cell ``g`` the log intensity is
``eta_g + z_g`` with offset ``eta_g = log A + beta0_k + beta1 * C_g``. The
latent field ``z`` lives on the ghost-extended lattice of the precision;
only window cells carry Poisson terms.

The Laplace approximation of ``log int p(n | z) p(z) dz`` is::

    0.5 log det Q - 0.5 log det(Q + diag(exp(eta + z_hat)))
        + sum_g log Pois(n_g; exp(eta_g + z_hat_g)) - 0.5 z_hat' Q z_hat

where the ``(2 pi)^(n/2)`` factors have already cancelled.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from scipy.special import gammaln

from .edge_correction import EdgeCorrectionMode, corrected_field
from .errors import ConfigurationError, DataError, NumericError, StaleFieldError
from .geometry import CountGrid, Grid, PointPattern
from .gmrf import MaternParams, PrecisionOperator, build_precision
from .influence import DEFAULT_CUTOFF_SD, InfluenceField, parent_marks
from .kernels.influence_kernel import InfluenceKernel, NoInfluence
from .priors import PriorSpec, log_prior
from .utils.logging_mixin import LoggingMixin

NEWTON_TOL = 1e-8
NEWTON_MAX_ITER = 50
_MAX_HALVINGS = 40


@dataclass(frozen=True, eq=False)
class ModelParams:
    """Full parameter vector: per-plot intercepts, influence, kernel and field."""

    beta0: tuple[float, ...]
    beta1: float
    kernel: InfluenceKernel
    matern: MaternParams
    plot_ids: tuple[str, ...] | None = None

    def __post_init__(self):
        beta0 = tuple(float(b) for b in np.atleast_1d(self.beta0))
        object.__setattr__(self, "beta0", beta0)
        object.__setattr__(self, "beta1", float(self.beta1))
        if not all(math.isfinite(b) for b in beta0) or not math.isfinite(self.beta1):
            raise ConfigurationError("[ModelParams] intercepts and beta1 must be finite")
        if self.plot_ids is not None:
            ids = tuple(str(p) for p in self.plot_ids)
            if len(ids) != len(beta0):
                raise ConfigurationError(f"[ModelParams] {len(beta0)} intercepts for {len(ids)} plots")
            object.__setattr__(self, "plot_ids", ids)

    @property
    def n_replicates(self) -> int:
        return len(self.beta0)

    @property
    def ids(self) -> tuple[str, ...]:
        return self.plot_ids if self.plot_ids is not None else tuple(str(i + 1) for i in range(len(self.beta0)))

    @property
    def has_influence(self) -> bool:
        return not isinstance(self.kernel, NoInfluence)

    def named_values(self) -> dict[str, float]:
        """Free parameters by export name; ``beta1`` is absent without influence."""
        out = {f"beta0_{pid}": b for pid, b in zip(self.ids, self.beta0)}
        if self.has_influence:
            out["beta1"] = self.beta1
            out.update(self.kernel.params)
        out["sigmaZ"] = self.matern.sigma
        out["rhoZ"] = self.matern.rho
        return out

    def with_values(self, **updates) -> "ModelParams":
        return replace(self, **updates)


@dataclass(frozen=True)
class LaplaceResult:
    z_hat: np.ndarray
    log_marginal: float
    converged: bool
    newton_iters: int
    grad_norm: float
    z_full: np.ndarray | None = None
    failed: bool = False
    message: str = ""


@dataclass
class LikelihoodDiagnostics:
    evaluations: int = 0
    newton_failures: int = 0
    newton_iters: int = 0
    failed_replicates: list[int] = field(default_factory=list)

    def record_failure(self, k: int):
        self.newton_failures += 1
        self.failed_replicates.append(k)


class ReplicateData(LoggingMixin):
    """Counts, parents and edge handling of one plot, with its field cache."""

    def __init__(self, plot_id: str, counts: CountGrid, parents: PointPattern, edge_mode: EdgeCorrectionMode,
                 cutoff_sd: float = DEFAULT_CUTOFF_SD):
        self.plot_id = str(plot_id)
        self.counts = counts
        self.parents = parents
        self.edge_mode = edge_mode
        self.cutoff_sd = cutoff_sd
        self._field: InfluenceField | None = None
        self._field_key: tuple | None = None
        self._warm: np.ndarray | None = None
        self._warm_window: np.ndarray | None = None
        self._pending: np.ndarray | None = None

    @property
    def grid(self) -> Grid:
        return self.counts.grid

    def refresh(self, kernel: InfluenceKernel) -> InfluenceField:
        """Corrected field for *kernel*, recomputed only when its parameters change."""
        if self._field_key != kernel.key:
            parent_marks(kernel, self.parents)
            self._field = corrected_field(kernel, self.parents, self.grid, self.edge_mode, self.cutoff_sd)
            self._field_key = kernel.key
        return self._field

    def field_for(self, kernel: InfluenceKernel) -> InfluenceField:
        if self._field is None or self._field_key != kernel.key:
            raise StaleFieldError(f"[ReplicateData] plot {self.plot_id}: field cached for {self._field_key}, "
                                  f"requested {kernel.key}")
        return self._field

    def warm_start(self, Q: PrecisionOperator) -> np.ndarray | None:
        if self._warm is None:
            return None
        if self._warm.shape[0] == Q.n:
            return self._warm
        z0 = np.zeros(Q.n)
        z0[Q.interior] = self._warm_window
        return z0

    def stage(self, result: LaplaceResult):
        self._pending = (result.z_full, result.z_hat)

    def commit(self):
        if self._pending is not None:
            self._warm, self._warm_window = self._pending
            self._pending = None

    def discard(self):
        self._pending = None

    def reset(self):
        self._warm = self._warm_window = self._pending = None


def offsets(params: ModelParams, replicate: ReplicateData, k: int) -> np.ndarray:
    """``log A + beta0_k + beta1 * C_g`` for every window cell."""
    fld = replicate.field_for(params.kernel)
    return math.log(replicate.grid.cell_area) + params.beta0[k] + params.beta1 * fld.values


def cell_log_intensity(params: ModelParams, replicate: ReplicateData, k: int, g, z_g):
    """Log of the expected count in cell *g* of replicate *k* given ``z_g``."""
    fld = replicate.field_for(params.kernel)
    value = math.log(replicate.grid.cell_area) + params.beta0[k] + params.beta1 * fld.values[g] + z_g
    return float(value) if np.ndim(value) == 0 else value


def _objective(z: np.ndarray, counts: np.ndarray, eta: np.ndarray, Q: PrecisionOperator) -> float:
    lin = eta + Q.restrict(z)
    with np.errstate(over="ignore", invalid="ignore"):
        return float(np.sum(counts * lin - np.exp(lin)) - 0.5 * Q.quad(z))


def find_mode(counts, eta, Q: PrecisionOperator, z0: np.ndarray | None = None,
              tol: float = NEWTON_TOL, max_iter: int = NEWTON_MAX_ITER) -> LaplaceResult:
    """Newton maximisation of the Poisson-GMRF log joint, with its Laplace value."""
    counts = np.asarray(counts, dtype=float).reshape(-1)
    eta = np.asarray(eta, dtype=float).reshape(-1)
    if counts.shape != eta.shape or counts.shape[0] != Q.n_interior:
        raise ConfigurationError(f"[find_mode] {counts.shape[0]} counts, {eta.shape[0]} offsets, "
                                 f"{Q.n_interior} window cells")
    idx = Q.interior
    z = np.zeros(Q.n) if z0 is None else np.array(z0, dtype=float).reshape(-1)
    if z.shape[0] != Q.n:
        raise ConfigurationError(f"[find_mode] start vector of length {z.shape[0]} for precision of size {Q.n}")
    obj = _objective(z, counts, eta, Q)
    if not math.isfinite(obj):
        raise NumericError("[find_mode] non-finite objective at the start point")

    iters = 0
    converged = False
    while True:
        mu = np.exp(eta + z[idx])
        grad = -(Q.matrix @ z)
        grad[idx] += counts - mu
        gnorm = float(np.max(np.abs(grad))) if grad.size else 0.0
        if not math.isfinite(gnorm):
            raise NumericError("[find_mode] non-finite gradient")
        if gnorm < tol:
            converged = True
            break
        if iters >= max_iter:
            break
        w = np.zeros(Q.n)
        w[idx] = mu
        step = Q.with_diagonal(w).solve(grad)
        t = 1.0
        for _ in range(_MAX_HALVINGS):
            cand = z + t * step
            cand_obj = _objective(cand, counts, eta, Q)
            if math.isfinite(cand_obj) and cand_obj >= obj - 1e-12 * (1.0 + abs(obj)):
                break
            t *= 0.5
        else:
            break
        z, obj = cand, cand_obj
        iters += 1

    w = np.zeros(Q.n)
    w[idx] = np.exp(eta + z[idx])
    logdet_h = Q.with_diagonal(w).logdet()
    lin = eta + z[idx]
    pois = float(np.sum(counts * lin - np.exp(lin) - gammaln(counts + 1.0)))
    log_marginal = 0.5 * Q.logdet() - 0.5 * logdet_h + pois - 0.5 * Q.quad(z)
    if not math.isfinite(log_marginal):
        raise NumericError("[find_mode] non-finite Laplace value")
    z_hat = Q.restrict(z).copy()
    return LaplaceResult(z_hat=z_hat, log_marginal=log_marginal, converged=converged, newton_iters=iters,
                         grad_norm=gnorm, z_full=z,
                         message="" if converged else f"no convergence after {iters} Newton steps")


def laplace_approximation(counts, eta, Q: PrecisionOperator, z0: np.ndarray | None = None) -> LaplaceResult:
    """Like :func:`find_mode` but never raises; failures carry ``failed=True`` and ``-inf``."""
    try:
        res = find_mode(counts, eta, Q, z0)
    except NumericError as e:
        n = Q.n_interior
        return LaplaceResult(np.zeros(n), -math.inf, False, 0, math.inf, None, True, str(e))
    if not res.converged:
        return replace(res, log_marginal=-math.inf, failed=True)
    return res


def laplace_loglik(counts, eta, Q: PrecisionOperator, z0: np.ndarray | None = None) -> float:
    """Laplace-approximated log marginal likelihood; ``-inf`` on failure."""
    return laplace_approximation(counts, eta, Q, z0).log_marginal


def _precision_for(params: ModelParams, grid: Grid, cache: dict) -> PrecisionOperator:
    if grid not in cache:
        cache[grid] = build_precision(grid, params.matern)
    return cache[grid]


def replicated_loglik(params: ModelParams, replicates: Sequence[ReplicateData],
                      diagnostics: LikelihoodDiagnostics | None = None, warm_start: bool = True) -> float:
    """Sum of per-replicate Laplace log-likelihoods, in replicate order."""
    if len(replicates) != params.n_replicates:
        raise ConfigurationError(f"[replicated_loglik] {params.n_replicates} intercepts for "
                                 f"{len(replicates)} replicates")
    diagnostics = diagnostics if diagnostics is not None else LikelihoodDiagnostics()
    diagnostics.evaluations += 1
    cache: dict = {}
    total = 0.0
    for k, rep in enumerate(replicates):
        try:
            Q = _precision_for(params, rep.grid, cache)
        except NumericError as e:
            rep.discard()
            diagnostics.record_failure(k)
            rep.log_debug(f"replicate {k} ({rep.plot_id}): {e}")
            return -math.inf
        res = laplace_approximation(rep.counts.counts, offsets(params, rep, k), Q,
                                    rep.warm_start(Q) if warm_start else None)
        diagnostics.newton_iters += res.newton_iters
        if res.failed:
            diagnostics.record_failure(k)
            rep.log_debug(f"replicate {k} ({rep.plot_id}): {res.message}")
            return -math.inf
        rep.stage(res)
        total += res.log_marginal
    return total


def log_posterior(params: ModelParams, replicates: Sequence[ReplicateData], priors: PriorSpec,
                  diagnostics: LikelihoodDiagnostics | None = None, warm_start: bool = True) -> float:
    """``log_prior + replicated_loglik``; fields follow the kernel parameters."""
    lp = log_prior(params, priors)
    if not math.isfinite(lp):
        return -math.inf
    for rep in replicates:
        rep.refresh(params.kernel)
    return lp + replicated_loglik(params, replicates, diagnostics, warm_start)


class LgcpModel(LoggingMixin):
    """Replicates and priors bundled as the MCMC target."""

    def __init__(self, replicates: Sequence[ReplicateData], priors: PriorSpec | None = None,
                 warm_start: bool = True):
        if not replicates:
            raise DataError("[LgcpModel] at least one replicate required")
        self.replicates = list(replicates)
        self.priors = priors or PriorSpec()
        self.warm_start = warm_start
        self.diagnostics = LikelihoodDiagnostics()

    @property
    def plot_ids(self) -> tuple[str, ...]:
        return tuple(r.plot_id for r in self.replicates)

    def log_posterior(self, params: ModelParams) -> float:
        for rep in self.replicates:
            rep.discard()
        return log_posterior(params, self.replicates, self.priors, self.diagnostics, self.warm_start)

    def commit(self):
        for rep in self.replicates:
            rep.commit()

    def reset(self):
        """Forget warm starts and counters so a new chain starts from scratch."""
        for rep in self.replicates:
            rep.reset()
        self.diagnostics = LikelihoodDiagnostics()

    def check_kernel(self, kernel: InfluenceKernel):
        for rep in self.replicates:
            parent_marks(kernel, rep.parents)


def expected_intensity(params: ModelParams, field_: InfluenceField, k: int = 0) -> np.ndarray:
    """Marginal expected intensity ``exp(beta0_k + beta1 C + sigma^2 / 2)`` per cell."""
    return np.exp(params.beta0[k] + params.beta1 * field_.values + 0.5 * params.matern.sigma2)
