"""
Best constants of the spectral inequalities

    sum_{i<=k} |a_i|^2 <= c_k * int_region |sum_{i<=k} a_i e_i|^2

on a discrete eigenbasis. The sharp c_k is 1 / mu_min of the Gram matrix
of the first k eigenvectors restricted to the region.
"""

import logging
from dataclasses import dataclass
from enum import Enum
from typing import Dict, Optional, Sequence

import numpy as np
from scipy.linalg import svd, svdvals
from scipy.stats import linregress

from . import config
from .errors import ValidationError
from .intervals import IntervalSet
from .spectral_core import EigenBasis
from .utils import progress

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class RestrictedGram:
    k: int
    region: IntervalSet
    matrix: np.ndarray
    factor: np.ndarray
    cell_count: int


@dataclass
class ConstantSeries:
    ks: np.ndarray
    lambdas: np.ndarray
    constants: np.ndarray

    @property
    def finite(self) -> np.ndarray:
        return np.isfinite(self.constants)


class Predictor(str, Enum):
    SQRT_LAMBDA = 'sqrt_lambda'
    LAMBDA_SIGMA = 'lambda_sigma'


@dataclass
class FitReport:
    slope: float
    intercept: float
    r_squared: float
    bound_ratio: float
    bounded: bool
    n_points: int
    n_excluded: int
    ratios: np.ndarray


def sigma_exponent(alpha: float, gamma: float = config.DEFAULT_GAMMA) -> float:
    """3/4 away from alpha = 1, 3/(2 gamma) at alpha = 1"""
    if not 0.0 < alpha < 2.0:
        raise ValidationError(f"alpha must lie in (0, 2), got {alpha}")
    if alpha == 1.0:
        if not 0.0 < gamma < 2.0:
            raise ValidationError(f"gamma must lie in (0, 2), got {gamma}")
        return 3.0 / (2.0 * gamma)
    return 0.75


def restricted_gram(basis: EigenBasis, k: int, region: IntervalSet, centers: np.ndarray) -> RestrictedGram:
    """Gram matrix sum over region cells of w e_i e_j for i, j <= k"""
    if not 1 <= k <= basis.size:
        raise ValidationError(f"k={k} outside 1..{basis.size}")
    if region.measure <= 0:
        raise ValidationError("Region is empty")
    inside = region.contains(centers)
    count = int(inside.sum())
    if count == 0:
        raise ValidationError(f"Region {region!r} contains no cell centers")
    if count < config.MIN_REGION_CELLS:
        raise ValidationError(
            f"Region {region!r} holds {count} cells, at least {config.MIN_REGION_CELLS} are needed")

    factor = np.sqrt(basis.weights[inside])[:, None] * basis.vectors[inside, :k]
    matrix = factor.T @ factor
    return RestrictedGram(k=k, region=region, matrix=0.5 * (matrix + matrix.T), factor=factor,
                          cell_count=count)


def best_spectral_constant(gram: RestrictedGram) -> float:
    """1 / mu_min of the restricted Gram matrix, +inf when unresolvable.

    mu_min is the squared smallest singular value of the factor; it counts
    as unresolved once that singular value falls to rounding level relative
    to the largest one.
    """
    sigma = svdvals(gram.factor) if gram.factor.shape[0] >= gram.k else np.zeros(1)
    ratio = float(sigma[-1] / sigma[0]) if sigma[0] > 0 else 0.0
    if ratio <= config.SENTINEL_SIGMA_RATIO:
        logger.warning(f"Spectral constant unresolved for k={gram.k} on {gram.region!r}: "
                       f"sigma_min/sigma_max={ratio:.3e} ({gram.cell_count} cells)")
        return float('inf')
    return 1.0 / float(sigma[-1]) ** 2


def minimal_direction(gram: RestrictedGram) -> np.ndarray:
    """Unit coefficient vector attaining the best constant"""
    _, _, vt = svd(gram.factor, full_matrices=True)
    return vt[-1]


def constant_series(basis: EigenBasis, region: IntervalSet, centers: np.ndarray,
                    ks: Sequence[int]) -> ConstantSeries:
    ks = np.asarray(list(ks), dtype=int)
    constants = np.array([
        best_spectral_constant(restricted_gram(basis, int(k), region, centers))
        for k in progress(ks, desc='spectral constants')
    ])
    return ConstantSeries(ks=ks, lambdas=basis.values[ks - 1].copy(), constants=constants)


def growth_exponent_check(series: ConstantSeries, predictor: Predictor = Predictor.SQRT_LAMBDA,
                          sigma: Optional[float] = None) -> FitReport:
    """Regress log c_k on sqrt(lambda_k) or lambda_k^sigma over the finite entries"""
    predictor = Predictor(predictor)
    if predictor is Predictor.LAMBDA_SIGMA and sigma is None:
        raise ValidationError("The lambda^sigma predictor needs sigma")

    finite = series.finite
    excluded = int((~finite).sum())
    if excluded:
        logger.warning(f"Excluding {excluded} unresolved constants from the growth fit")
    lambdas = series.lambdas[finite]
    log_c = np.log(series.constants[finite])
    if len(log_c) < config.MIN_SERIES_POINTS:
        raise ValidationError(
            f"Growth check needs {config.MIN_SERIES_POINTS} finite constants, got {len(log_c)}")

    x = np.sqrt(lambdas) if predictor is Predictor.SQRT_LAMBDA else lambdas ** sigma
    if np.ptp(x) <= 0:
        raise ValidationError("Degenerate regression: predictor is constant")

    fit = linregress(x, log_c)
    ratios = log_c / x
    positive = ratios[ratios > 0]
    if len(positive) == len(ratios):
        bound_ratio = float(positive.max() / positive.min())
    else:
        bound_ratio = float('inf')
    bounded = bool(np.isfinite(ratios).all() and bound_ratio < config.BOUND_RATIO_LIMIT)
    return FitReport(slope=float(fit.slope), intercept=float(fit.intercept),
                     r_squared=float(fit.rvalue ** 2), bound_ratio=bound_ratio, bounded=bounded,
                     n_points=len(log_c), n_excluded=excluded, ratios=ratios)


def monte_carlo_ratio(gram: RestrictedGram, samples: int, rng: np.random.Generator) -> Dict[str, float]:
    """Brute-force max of sum |a|^2 / int_region |.|^2 over random coefficients"""
    coeffs = rng.standard_normal((samples, gram.k))
    restricted = np.einsum('si,ij,sj->s', coeffs, gram.matrix, coeffs)
    ratios = np.sum(coeffs ** 2, axis=1) / restricted
    return {'max_ratio': float(ratios.max()), 'samples': float(samples)}
