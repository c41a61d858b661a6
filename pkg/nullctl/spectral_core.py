"""
Discretization of the diffusion operators on I = (0, 1)

Two operators share one cell-centered finite-volume scheme:

    Laplacian   -v_xx                 Dirichlet at both ends
    Degenerate  -(x^alpha v_x)_x      Dirichlet at x=1, and at x=0 either a
                                      weak Dirichlet trace (alpha < 1) or a
                                      zero flux (alpha >= 1)

The symmetric flux matrix K pairs with the diagonal cell-width matrix W:
the discrete operator is W^-1 K, and its spectrum is the generalized
pencil K v = lambda W v.
"""

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Union

import numpy as np
from scipy import sparse
from scipy.linalg import LinAlgError, eigh_tridiagonal
from scipy.optimize import brentq
from scipy.special import jv
from scipy.stats import linregress

from . import config
from .errors import ConvergenceError, ValidationError

logger = logging.getLogger(__name__)


class OperatorKind(str, Enum):
    LAPLACIAN = 'laplacian'
    DEGENERATE = 'degenerate'


class BoundaryCondition(str, Enum):
    DIRICHLET_WEAK = 'dirichlet_weak'
    FLUX_STRONG = 'flux_strong'


@dataclass(frozen=True, eq=False)
class Grid:
    """1D mesh on (0, 1) with faces (j/n)^grading"""
    n: int
    faces: np.ndarray
    centers: np.ndarray
    weights: np.ndarray
    grading: float = 1.0

    @classmethod
    def graded(cls, n: int, grading: float = 1.0) -> 'Grid':
        if int(n) != n or n < 1:
            raise ValidationError(f"Cell count must be a positive integer, got {n}")
        if grading < 1:
            raise ValidationError(f"Grading exponent must be >= 1, got {grading}")
        n = int(n)
        faces = (np.arange(n + 1) / n) ** float(grading)
        faces[0], faces[-1] = 0.0, 1.0
        centers = 0.5 * (faces[:-1] + faces[1:])
        weights = np.diff(faces)
        return cls(n=n, faces=faces, centers=centers, weights=weights, grading=float(grading))

    @classmethod
    def uniform(cls, n: int) -> 'Grid':
        return cls.graded(n, 1.0)

    def __post_init__(self):
        if len(self.faces) != self.n + 1 or len(self.centers) != self.n or len(self.weights) != self.n:
            raise ValidationError("Grid arrays do not match the cell count")
        if self.faces[0] != 0.0 or self.faces[-1] != 1.0:
            raise ValidationError("Grid faces must start at 0 and end at 1")
        if np.any(np.diff(self.faces) <= 0):
            raise ValidationError("Grid faces must be strictly increasing")
        if np.any(self.centers <= self.faces[:-1]) or np.any(self.centers >= self.faces[1:]):
            raise ValidationError("Every cell center must lie strictly inside its cell")
        if abs(self.weights.sum() - 1.0) > config.WEIGHT_SUM_TOL:
            raise ValidationError(f"Cell widths sum to {self.weights.sum()!r}, expected 1")

    def cells_in(self, region) -> np.ndarray:
        """Boolean mask of cells whose center lies in an IntervalSet"""
        return region.contains(self.centers)


@dataclass(frozen=True)
class OperatorSpec:
    kind: OperatorKind
    alpha: float = 0.0
    bc_left: BoundaryCondition = BoundaryCondition.DIRICHLET_WEAK

    @classmethod
    def laplacian(cls) -> 'OperatorSpec':
        return cls(OperatorKind.LAPLACIAN, 0.0, BoundaryCondition.DIRICHLET_WEAK)

    @classmethod
    def degenerate(cls, alpha: float, bc_left: Optional[BoundaryCondition] = None) -> 'OperatorSpec':
        """Degenerate operator; the left condition follows alpha unless given"""
        if bc_left is None:
            bc_left = (BoundaryCondition.DIRICHLET_WEAK if 0 < alpha < 1
                       else BoundaryCondition.FLUX_STRONG)
        return cls(OperatorKind.DEGENERATE, float(alpha), BoundaryCondition(bc_left))

    def __post_init__(self):
        kind = OperatorKind(self.kind)
        bc = BoundaryCondition(self.bc_left)
        object.__setattr__(self, 'kind', kind)
        object.__setattr__(self, 'bc_left', bc)
        object.__setattr__(self, 'alpha', float(self.alpha))
        if kind is OperatorKind.LAPLACIAN:
            if self.alpha != 0.0 or bc is not BoundaryCondition.DIRICHLET_WEAK:
                raise ValidationError("Laplacian takes no alpha and Dirichlet conditions only")
            return
        if not 0.0 < self.alpha < 2.0:
            raise ValidationError(f"alpha must lie in (0, 2), got {self.alpha}")
        expected = BoundaryCondition.DIRICHLET_WEAK if self.alpha < 1.0 else BoundaryCondition.FLUX_STRONG
        if bc is not expected:
            raise ValidationError(
                f"alpha={self.alpha} requires bc_left={expected.value}, got {bc.value}")

    def coefficient(self, x: np.ndarray) -> np.ndarray:
        """Diffusion coefficient kappa(x) evaluated at faces"""
        if self.kind is OperatorKind.LAPLACIAN:
            return np.ones_like(x)
        return np.power(x, self.alpha)


@dataclass(frozen=True, eq=False)
class StiffnessMatrix:
    """Symmetric tridiagonal flux matrix K with its weight reference W"""
    grid: Grid
    spec: OperatorSpec
    diag: np.ndarray
    offdiag: np.ndarray

    @property
    def n(self) -> int:
        return self.grid.n

    @property
    def weights(self) -> np.ndarray:
        return self.grid.weights

    def to_sparse(self) -> sparse.csc_matrix:
        return sparse.diags([self.offdiag, self.diag, self.offdiag], [-1, 0, 1], format='csc')

    def to_dense(self) -> np.ndarray:
        return self.to_sparse().toarray()

    def operator_dense(self) -> np.ndarray:
        """Row-scaled operator W^-1 K (the discrete -A or -Abar)"""
        return self.to_dense() / self.weights[:, None]

    def matvec(self, v: np.ndarray) -> np.ndarray:
        out = self.diag * v
        out[:-1] += self.offdiag * v[1:]
        out[1:] += self.offdiag * v[:-1]
        return out


@dataclass(frozen=True, eq=False)
class EigenBasis:
    """Ascending eigenpairs, columns orthonormal in the weighted inner product"""
    values: np.ndarray
    vectors: np.ndarray
    weights: np.ndarray
    residuals: np.ndarray = field(default=None)

    @property
    def size(self) -> int:
        return len(self.values)

    def coefficients(self, v: np.ndarray, k: Optional[int] = None) -> np.ndarray:
        vecs = self.vectors if k is None else self.vectors[:, :k]
        return vecs.T @ (self.weights * v)

    def truncated(self, k: int) -> 'EigenBasis':
        if not 1 <= k <= self.size:
            raise ValidationError(f"Cannot truncate a {self.size}-mode basis to {k} modes")
        residuals = None if self.residuals is None else self.residuals[:k]
        return EigenBasis(self.values[:k], self.vectors[:, :k], self.weights, residuals)


@dataclass
class GrowthReport:
    exponent: float
    prefactor: float
    residual: float
    k_min: int
    k_max: int


def assemble_operator(grid: Grid, spec: OperatorSpec) -> StiffnessMatrix:
    """Finite-volume flux matrix of -A or -Abar on the grid"""
    n = grid.n
    # interior faces 1..n-1: conductance kappa(face) / center spacing
    spacing = np.diff(grid.centers)
    interior = spec.coefficient(grid.faces[1:-1]) / spacing

    if spec.bc_left is BoundaryCondition.FLUX_STRONG:
        left = 0.0
    else:
        # inverse of the integrated resistance int_0^{c0} x^-alpha dx
        c0 = grid.centers[0]
        left = (1.0 - spec.alpha) / c0 ** (1.0 - spec.alpha)
    right = float(spec.coefficient(np.array([1.0]))[0]) / (0.5 * grid.weights[-1])

    diag = np.zeros(n)
    diag[0] += left
    diag[-1] += right
    diag[:-1] += interior
    diag[1:] += interior
    offdiag = -interior

    logger.debug(f"Assembled {spec.kind.value} operator on {n} cells "
                 f"(alpha={spec.alpha}, bc_left={spec.bc_left.value})")
    return StiffnessMatrix(grid=grid, spec=spec, diag=diag, offdiag=offdiag)


def _fix_signs(vectors: np.ndarray) -> np.ndarray:
    """First nonzero component of each column made positive"""
    for j in range(vectors.shape[1]):
        column = vectors[:, j]
        scale = np.max(np.abs(column))
        nonzero = np.flatnonzero(np.abs(column) > 1e-12 * scale)
        if nonzero.size and column[nonzero[0]] < 0:
            vectors[:, j] = -column
    return vectors


def eigendecompose(mat: StiffnessMatrix, k: Optional[int] = None) -> EigenBasis:
    """k smallest eigenpairs of K v = lambda W v"""
    n = mat.n
    k = n if k is None else int(k)
    if not 1 <= k <= n:
        raise ValidationError(f"Requested {k} eigenpairs from a {n}-cell operator")

    root_w = np.sqrt(mat.weights)
    sym_diag = mat.diag / mat.weights
    sym_off = mat.offdiag / (root_w[:-1] * root_w[1:])

    try:
        if n == 1:
            values, q = sym_diag.copy(), np.ones((1, 1))
        else:
            values, q = eigh_tridiagonal(sym_diag, sym_off, select='i', select_range=(0, k - 1))
    except (LinAlgError, ValueError) as exc:
        raise ConvergenceError(
            f"Tridiagonal eigensolver failed: {exc}",
            {'n': n, 'k': k, 'kind': mat.spec.kind.value, 'alpha': mat.spec.alpha},
        ) from exc

    order = np.argsort(values)
    values = values[order]
    q = q[:, order]

    vectors = _fix_signs(q / root_w[:, None])

    # pencil residual ||K v - lambda W v|| on the returned vectors
    kv = mat.diag[:, None] * vectors
    kv[:-1] += mat.offdiag[:, None] * vectors[1:]
    kv[1:] += mat.offdiag[:, None] * vectors[:-1]
    wv = mat.weights[:, None] * vectors
    residuals = np.linalg.norm(kv - wv * values, axis=0)
    # normwise backward error of the pencil
    k_norm = float(np.max(np.abs(mat.diag) + np.abs(np.r_[mat.offdiag, 0.0]) + np.abs(np.r_[0.0, mat.offdiag])))
    scale = (k_norm + np.abs(values) * float(mat.weights.max())) * np.linalg.norm(vectors, axis=0)
    relative = residuals / np.maximum(scale, np.finfo(float).tiny)
    worst = float(relative.max())
    if worst > config.EIGEN_RESIDUAL_TOL:
        logger.warning(f"Eigenpair residual {worst:.3e} exceeds {config.EIGEN_RESIDUAL_TOL:g} "
                       f"relative (n={n}, kind={mat.spec.kind.value})")

    return EigenBasis(values=values, vectors=vectors, weights=mat.weights, residuals=residuals)


def weighted_inner_product(u: np.ndarray, v: np.ndarray, grid: Grid) -> float:
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    if u.shape != (grid.n,) or v.shape != (grid.n,):
        raise ValidationError(f"Vectors of shape {u.shape} and {v.shape} do not match a {grid.n}-cell grid")
    return float(np.sum(grid.weights * u * v))


def weighted_norm(u: np.ndarray, grid: Grid) -> float:
    return float(np.sqrt(weighted_inner_product(u, u, grid)))


def rayleigh_quotient(mat: StiffnessMatrix, v: np.ndarray) -> float:
    v = np.asarray(v, dtype=float)
    denom = float(np.sum(mat.weights * v * v))
    if denom <= 0:
        raise ValidationError("Rayleigh quotient of the zero vector is undefined")
    return float(v @ mat.matvec(v)) / denom


def eigenvalue_growth_fit(basis: Union[EigenBasis, np.ndarray], k_min: int = 1,
                          k_max: Optional[int] = None) -> GrowthReport:
    """Least-squares fit log lambda_k = log C + p log k over k_min..k_max.

    For an EigenBasis the range is capped at n/10 so only modes the mesh
    resolves enter the fit.
    """
    if isinstance(basis, EigenBasis):
        values = basis.values
        resolved = max(len(basis.weights) // 10, 1)
    else:
        values = np.asarray(basis, dtype=float)
        resolved = len(values)

    upper = min(len(values), resolved, k_max if k_max is not None else len(values))
    ks = np.arange(max(k_min, 1), upper + 1)
    if len(ks) < config.MIN_GROWTH_POINTS:
        raise ValidationError(
            f"Growth fit needs {config.MIN_GROWTH_POINTS} resolved eigenvalues, "
            f"got {len(ks)} (k_min={k_min}, k_max={upper})")
    lams = values[ks - 1]
    if np.any(lams <= 0):
        raise ValidationError("Growth fit needs positive eigenvalues")

    fit = linregress(np.log(ks), np.log(lams))
    predicted = fit.intercept + fit.slope * np.log(ks)
    residual = float(np.sqrt(np.mean((np.log(lams) - predicted) ** 2)))
    return GrowthReport(exponent=float(fit.slope), prefactor=float(np.exp(fit.intercept)),
                        residual=residual, k_min=int(ks[0]), k_max=int(ks[-1]))


def bessel_order(alpha: float) -> float:
    """Bessel order of the degenerate eigenfunctions x^((1-alpha)/2) J_nu(.)"""
    if not 0.0 < alpha < 2.0:
        raise ValidationError(f"alpha must lie in (0, 2), got {alpha}")
    return abs(1.0 - alpha) / (2.0 - alpha)


def bessel_zeros(nu: float, count: int, step: float = 0.25) -> np.ndarray:
    """First positive zeros of J_nu by scanning for sign changes + brentq"""
    zeros = []
    x = 1e-6
    fx = jv(nu, x)
    while len(zeros) < count:
        x_next = x + step
        f_next = jv(nu, x_next)
        if fx == 0.0:
            zeros.append(x)
        elif fx * f_next < 0:
            zeros.append(brentq(lambda r: jv(nu, r), x, x_next, xtol=1e-14, rtol=4 * np.finfo(float).eps))
        x, fx = x_next, f_next
    return np.array(zeros[:count])


def bessel_eigenvalues(alpha: float, k: int) -> np.ndarray:
    """Closed-form eigenvalues ((2-alpha)/2)^2 j_{nu,i}^2 of -(x^alpha v_x)_x.

    The order is (1-alpha)/(2-alpha) for the weak trace condition and
    (alpha-1)/(2-alpha) for the zero-flux condition.
    """
    nu = bessel_order(alpha)
    scale = (0.5 * (2.0 - alpha)) ** 2
    return scale * bessel_zeros(nu, int(k)) ** 2


def build_operator(kind: OperatorKind, n: int, alpha: float = 0.0,
                   grading: Optional[float] = None) -> StiffnessMatrix:
    """Grid + spec + assembly in one call, with the default grading per kind"""
    kind = OperatorKind(kind)
    if grading is None:
        grading = (config.DEFAULT_GRADING_LAPLACIAN if kind is OperatorKind.LAPLACIAN
                   else config.DEFAULT_GRADING_DEGENERATE)
    grid = Grid.graded(n, grading)
    spec = OperatorSpec.laplacian() if kind is OperatorKind.LAPLACIAN else OperatorSpec.degenerate(alpha)
    return assemble_operator(grid, spec)
