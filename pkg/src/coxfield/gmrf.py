"""Matérn (nu = 2) random field and its sparse GMRF approximation.

On a lattice with spacing ``h`` the SPDE ``(kappa^2 - Laplacian)^(3/2) Z = W``
is approximated by the precision ``Q0 = h^2 (kappa^2 I + L / h^2)^3`` where
``L`` is the graph Laplacian of the 4-neighbour lattice and
``kappa = 2 / rho``. ``Q0`` is rescaled so that the stationary lattice
variance equals ``sigma^2``; the constant is the lattice Green's function at
lag 0, evaluated once per ``(rho, h)``.

The lattice is extended by ``ceil(2 rho / h)`` ghost cells on every side to
keep the boundary variance inflation away from the observation window.
Callers work with the full extended vector and restrict to the window with
:meth:`PrecisionOperator.restrict`.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.sparse as sp
from robot.api import logger
from scipy.sparse.linalg import splu
from scipy.special import gamma as gamma_fn, kv

from .errors import ConfigurationError, NumericError
from .geometry import Grid

try:  # optional extra "cholmod"
    from sksparse.cholmod import CholmodNotPositiveDefiniteError, cholesky as cholmod_cholesky
    HAVE_CHOLMOD = True
except ImportError:  # pragma: no cover - depends on the environment
    cholmod_cholesky = None
    CholmodNotPositiveDefiniteError = ()
    HAVE_CHOLMOD = False

NU = 2.0
_LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class MaternParams:
    sigma2: float
    rho: float

    def __post_init__(self):
        if not (self.sigma2 > 0 and math.isfinite(self.sigma2)):
            raise ConfigurationError(f"[MaternParams] sigma2 must be > 0, got {self.sigma2}")
        if not (self.rho > 0 and math.isfinite(self.rho)):
            raise ConfigurationError(f"[MaternParams] rho must be > 0, got {self.rho}")

    @classmethod
    def from_sd(cls, sigma: float, rho: float) -> "MaternParams":
        if not (sigma > 0 and math.isfinite(sigma)):
            raise ConfigurationError(f"[MaternParams] sigma must be > 0, got {sigma}")
        return cls(float(sigma) ** 2, float(rho))

    @property
    def sigma(self) -> float:
        return math.sqrt(self.sigma2)

    @property
    def kappa(self) -> float:
        return math.sqrt(2.0 * NU) / self.rho


def matern_cov(r, params: MaternParams):
    """Matérn covariance with smoothness 2; ``sigma^2`` at ``r = 0``."""
    r = np.asarray(r, dtype=float)
    if np.any(r < 0):
        raise ConfigurationError("[matern_cov] distances must be >= 0")
    x = math.sqrt(2.0 * NU) * r / params.rho
    with np.errstate(invalid="ignore", over="ignore"):
        c = params.sigma2 * 2.0 ** (1.0 - NU) / gamma_fn(NU) * x ** NU * kv(NU, x)
    c = np.where(x == 0, params.sigma2, c)
    c = np.where(np.isfinite(c), c, 0.0)
    return float(c) if c.ndim == 0 else c


# ---------------------------------------------------------------------------
# Sparse Cholesky
# ---------------------------------------------------------------------------

class SparseCholesky:
    """Factorisation of a sparse SPD matrix.

    CHOLMOD when ``scikit-sparse`` is importable, otherwise SuperLU run in
    symmetric mode with diagonal pivoting, which yields ``P^T A P = L D L^T``
    with ``U = D L^T``.
    """

    def __init__(self, matrix: sp.spmatrix, context: str = "", backend: str | None = None):
        self.n = matrix.shape[0]
        self.context = context
        self.backend = backend or ("cholmod" if HAVE_CHOLMOD else "superlu")
        self._u_solver = None
        if self.backend == "cholmod":
            self._factor = self._cholmod(matrix)
        elif self.backend == "superlu":
            self._factor = self._superlu(matrix)
        else:
            raise ConfigurationError(f"[SparseCholesky] unknown backend '{self.backend}'")

    def _fail(self, reason) -> NumericError:
        return NumericError(f"[SparseCholesky] factorisation failed ({self.context}): {reason}")

    def _cholmod(self, matrix, previous=None):
        try:
            if previous is not None:
                return previous.cholesky(sp.csc_matrix(matrix))
            return cholmod_cholesky(sp.csc_matrix(matrix))
        except CholmodNotPositiveDefiniteError as e:
            raise self._fail(e) from e

    def _superlu(self, matrix):
        try:
            lu = splu(sp.csc_matrix(matrix), permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0,
                      options={"SymmetricMode": True})
        except RuntimeError as e:
            raise self._fail(e) from e
        diag = lu.U.diagonal()
        if not np.all(diag > 0) or not np.all(np.isfinite(diag)):
            raise self._fail("matrix is not positive definite")
        if not np.array_equal(lu.perm_r, lu.perm_c):
            raise self._fail("off-diagonal pivoting")
        self._diag = diag
        return lu

    def refactor(self, matrix: sp.spmatrix, context: str | None = None) -> "SparseCholesky":
        """Factorise a matrix with the same sparsity pattern."""
        out = SparseCholesky.__new__(SparseCholesky)
        out.n = self.n
        out.context = context if context is not None else self.context
        out.backend = self.backend
        out._u_solver = None
        if self.backend == "cholmod":
            out._factor = out._cholmod(matrix, previous=self._factor)
        else:
            out._factor = out._superlu(matrix)
        return out

    def logdet(self) -> float:
        if self.backend == "cholmod":
            return float(self._factor.logdet())
        return float(np.sum(np.log(self._diag)))

    def solve(self, b: np.ndarray) -> np.ndarray:
        if self.backend == "cholmod":
            return np.asarray(self._factor(b)).reshape(np.shape(b))
        return self._factor.solve(np.asarray(b, dtype=float))

    def solve_sqrt(self, z: np.ndarray) -> np.ndarray:
        """``x`` with ``cov(x) = A^{-1}`` when ``z`` is standard normal."""
        if self.backend == "cholmod":
            return self._factor.apply_Pt(self._factor.solve_Lt(z, use_LDLt_decomposition=False))
        if self._u_solver is None:
            self._u_solver = splu(sp.csc_matrix(self._factor.U), permc_spec="NATURAL", diag_pivot_thresh=0.0)
        y = self._u_solver.solve(np.sqrt(self._diag) * z)
        return y[self._factor.perm_c]


# ---------------------------------------------------------------------------
# Precision
# ---------------------------------------------------------------------------

def _path_laplacian(n: int) -> sp.csr_matrix:
    main = np.full(n, 2.0)
    if n > 0:
        main[0] = main[-1] = 1.0
    if n == 1:
        main[0] = 0.0
    off = -np.ones(max(n - 1, 0))
    return sp.diags([off, main, off], [-1, 0, 1], shape=(n, n), format="csr")


def lattice_laplacian(n_x: int, n_y: int) -> sp.csr_matrix:
    """Graph Laplacian of the 4-neighbour lattice in row-major order."""
    return (sp.kron(sp.identity(n_y), _path_laplacian(n_x))
            + sp.kron(_path_laplacian(n_y), sp.identity(n_x))).tocsr()


@lru_cache(maxsize=256)
def lattice_variance(kappa: float, cell_size: float) -> float:
    """Stationary variance of the unscaled lattice field ``Q0``.

    Midpoint rule over the frequency torus; the integrand is smooth and
    periodic so the rule converges geometrically once the peak of width
    ``kappa * h`` is resolved.
    """
    kh = kappa * cell_size
    n = int(min(2048, max(256, math.ceil(64.0 / kh))))
    w = (np.arange(n) + 0.5) * (math.pi / n)
    s = np.sin(0.5 * w) ** 2
    symbol = kh * kh + 4.0 * (s[:, None] + s[None, :])
    return float(cell_size ** 4 * np.mean(1.0 / symbol ** 3))


def ghost_cells(params: MaternParams, cell_size: float) -> int:
    return int(math.ceil(2.0 * params.rho / cell_size))


class PrecisionOperator:
    """Sparse precision on a (possibly ghost-extended) lattice.

    ``interior`` indexes the window cells inside the extended vector.
    """

    def __init__(self, matrix: sp.spmatrix, *, interior: np.ndarray | None = None, grid: Grid | None = None,
                 pad: int = 0, params: MaternParams | None = None, backend: str | None = None):
        matrix = sp.csc_matrix(matrix)
        if matrix.shape[0] != matrix.shape[1]:
            raise ConfigurationError(f"[PrecisionOperator] matrix must be square, got {matrix.shape}")
        self.matrix = matrix
        self.n = matrix.shape[0]
        self.grid = grid
        self.pad = pad
        self.params = params
        idx = np.arange(self.n) if interior is None else np.asarray(interior, dtype=np.int64)
        idx.setflags(write=False)
        self.interior = idx
        self.factor = SparseCholesky(matrix, context=self._context(), backend=backend)

    def _context(self) -> str:
        if self.params is None:
            return "explicit precision"
        return f"sigma2={self.params.sigma2:g}, rho={self.params.rho:g}"

    @property
    def n_interior(self) -> int:
        return int(self.interior.shape[0])

    def logdet(self) -> float:
        return self.factor.logdet()

    def quad(self, z: np.ndarray) -> float:
        return float(z @ (self.matrix @ z))

    def restrict(self, z: np.ndarray) -> np.ndarray:
        """Window part of an extended vector."""
        return np.asarray(z)[self.interior]

    def with_diagonal(self, d: np.ndarray) -> SparseCholesky:
        """Factorisation of ``Q + diag(d)``."""
        shifted = self.matrix + sp.diags(d, 0, shape=self.matrix.shape, format="csc")
        return self.factor.refactor(shifted, context=f"{self._context()}, Q + diag")


def build_precision(grid: Grid, params: MaternParams, pad_cells: int | None = None,
                    backend: str | None = None) -> PrecisionOperator:
    """SPDE precision for *grid* with ghost padding, variance-calibrated."""
    h = grid.cell_size
    pad = ghost_cells(params, h) if pad_cells is None else int(pad_cells)
    if pad < 0:
        raise ConfigurationError(f"[build_precision] ghost cells must be >= 0, got {pad}")
    ext = grid.padded(pad)
    kappa = params.kappa
    k = sp.identity(ext.G, format="csr") * (kappa * kappa) + lattice_laplacian(ext.n_x, ext.n_y) / (h * h)
    q0 = (h * h) * (k @ k @ k)
    scale = lattice_variance(kappa, h) / params.sigma2
    q = (scale * q0).tocsc()
    logger.debug(f"[build_precision] {ext.n_x}x{ext.n_y} lattice ({pad} ghost cells), "
                 f"kappa={kappa:.4g}, scale={scale:.4g}")
    return PrecisionOperator(q, interior=grid.interior_index(pad), grid=grid, pad=pad, params=params,
                             backend=backend)


def gmrf_logpdf(z: np.ndarray, Q: PrecisionOperator) -> float:
    """``0.5 log det Q - n/2 log 2 pi - 0.5 z^T Q z``."""
    z = np.asarray(z, dtype=float).reshape(-1)
    if z.shape[0] != Q.n:
        raise ConfigurationError(f"[gmrf_logpdf] vector of length {z.shape[0]} for precision of size {Q.n}")
    return 0.5 * Q.logdet() - 0.5 * Q.n * _LOG_2PI - 0.5 * Q.quad(z)


def gmrf_sample(Q: PrecisionOperator, rng: np.random.Generator) -> np.ndarray:
    """One draw from ``N(0, Q^{-1})`` on the full (extended) lattice."""
    return Q.factor.solve_sqrt(rng.standard_normal(Q.n))
