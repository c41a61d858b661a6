import numpy as np
import pytest

from nullctl.errors import ValidationError
from nullctl.intervals import IntervalSet
from nullctl.spectral_core import OperatorKind, build_operator, eigendecompose
from nullctl.spectral_ineq import (ConstantSeries, Predictor, best_spectral_constant, constant_series,
                                   growth_exponent_check, minimal_direction, monte_carlo_ratio,
                                   restricted_gram, sigma_exponent)


@pytest.fixture(scope='module')
def laplacian_2000():
    mat = build_operator(OperatorKind.LAPLACIAN, 2000)
    return mat, eigendecompose(mat, 20)


def test_sigma_exponent():
    assert sigma_exponent(0.5) == 0.75
    assert sigma_exponent(1.5) == 0.75
    assert sigma_exponent(1.0, 1.5) == pytest.approx(1.0)
    with pytest.raises(ValidationError):
        sigma_exponent(1.0, 2.0)
    with pytest.raises(ValidationError):
        sigma_exponent(2.0)


def test_single_mode_constant_is_inverse_local_mass():
    mat = build_operator(OperatorKind.LAPLACIAN, 400)
    basis = eigendecompose(mat, 1)
    region = IntervalSet([(0.2, 0.3)])
    gram = restricted_gram(basis, 1, region, mat.grid.centers)
    inside = region.contains(mat.grid.centers)
    mass = np.sum(mat.weights[inside] * basis.vectors[inside, 0] ** 2)
    assert best_spectral_constant(gram) == pytest.approx(1.0 / mass, rel=1e-10)


def test_full_region_constant_is_one():
    mat = build_operator(OperatorKind.DEGENERATE, 200, alpha=0.5)
    basis = eigendecompose(mat, 8)
    gram = restricted_gram(basis, 8, IntervalSet([(0.0, 1.0)]), mat.grid.centers)
    assert best_spectral_constant(gram) == pytest.approx(1.0, rel=1e-10)


def test_region_needs_enough_cells():
    mat = build_operator(OperatorKind.LAPLACIAN, 20)
    basis = eigendecompose(mat, 3)
    with pytest.raises(ValidationError):
        restricted_gram(basis, 2, IntervalSet([(0.2, 0.3)]), mat.grid.centers)
    with pytest.raises(ValidationError):
        restricted_gram(basis, 2, IntervalSet(), mat.grid.centers)


def test_unresolvable_constant_is_infinite():
    mat = build_operator(OperatorKind.LAPLACIAN, 200)
    basis = eigendecompose(mat, 20)
    gram = restricted_gram(basis, 15, IntervalSet([(0.45, 0.5)]), mat.grid.centers)
    assert gram.cell_count == 10
    assert best_spectral_constant(gram) == float('inf')


def test_half_domain_closed_forms():
    mat = build_operator(OperatorKind.LAPLACIAN, 400)
    basis = eigendecompose(mat, 2)
    half = IntervalSet([(0.0, 0.5)])
    gram = restricted_gram(basis, 2, half, mat.grid.centers)
    assert gram.matrix[0, 0] == pytest.approx(0.5, abs=1e-3)
    assert gram.matrix[0, 1] == pytest.approx(4.0 / (3.0 * np.pi), abs=1e-3)
    one_mode = restricted_gram(basis, 1, half, mat.grid.centers)
    assert best_spectral_constant(one_mode) == pytest.approx(2.0, rel=1e-2)


def test_minimal_direction_attains_constant(laplacian_2000, rng):
    mat, basis = laplacian_2000
    gram = restricted_gram(basis, 3, IntervalSet([(0.0, 0.5)]), mat.grid.centers)
    constant = best_spectral_constant(gram)
    a = minimal_direction(gram)
    assert np.linalg.norm(a) == pytest.approx(1.0)
    assert 1.0 / (a @ gram.matrix @ a) == pytest.approx(constant, rel=1e-8)

    sampled = monte_carlo_ratio(gram, 100_000, rng)
    assert sampled['max_ratio'] <= constant * (1 + 1e-8)
    assert sampled['max_ratio'] >= 0.98 * constant


def test_constants_grow_until_unresolved(laplacian_2000):
    mat, basis = laplacian_2000
    series = constant_series(basis, IntervalSet([(0.2, 0.3)]), mat.grid.centers, range(2, 21))
    finite = series.finite
    # once a constant is unresolved every larger k is too
    assert np.all(np.diff(finite.astype(int)) <= 0)
    resolved = series.constants[finite]
    assert np.all(resolved >= 1.0)
    assert np.all(np.diff(resolved) >= -1e-6 * resolved[:-1])


def test_small_singular_values_stay_resolved(laplacian_2000):
    mat, basis = laplacian_2000
    gram = restricted_gram(basis, 7, IntervalSet([(0.2, 0.3)]), mat.grid.centers)
    constant = best_spectral_constant(gram)
    # far past 1e14, still finite while sigma_min sits above rounding level
    assert np.isfinite(constant)
    assert constant > 1e14
    assert constant == pytest.approx(1.0 / np.linalg.svd(gram.factor, compute_uv=False)[-1] ** 2)


def test_narrow_laplacian_region_bounded_growth(laplacian_2000):
    mat, basis = laplacian_2000
    series = constant_series(basis, IntervalSet([(0.2, 0.3)]), mat.grid.centers, range(2, 21))
    assert series.finite[:8].all()
    report = growth_exponent_check(series, Predictor.SQRT_LAMBDA)
    assert report.n_points + report.n_excluded == 19
    assert report.n_points >= 8
    assert report.slope > 0
    assert report.r_squared >= 0.9
    assert report.bounded
    assert report.bound_ratio < 10.0


def test_enlarging_region_lowers_constant(laplacian_2000):
    mat, basis = laplacian_2000
    narrow = restricted_gram(basis, 4, IntervalSet([(0.2, 0.3)]), mat.grid.centers)
    wide = restricted_gram(basis, 4, IntervalSet([(0.2, 0.5)]), mat.grid.centers)
    assert best_spectral_constant(wide) <= best_spectral_constant(narrow)


def test_laplacian_exponent_check(laplacian_2000):
    mat, basis = laplacian_2000
    series = constant_series(basis, IntervalSet([(0.1, 0.6)]), mat.grid.centers, range(2, 13))
    report = growth_exponent_check(series, Predictor.SQRT_LAMBDA)
    assert report.n_points + report.n_excluded == 11
    assert report.slope > 0
    assert np.isfinite(report.bound_ratio)


@pytest.mark.slow
def test_degenerate_exponent_check():
    mat = build_operator(OperatorKind.DEGENERATE, 2000, alpha=0.5, grading=2.0)
    basis = eigendecompose(mat, 15)
    series = constant_series(basis, IntervalSet([(0.5, 0.7)]), mat.grid.centers, range(2, 16))
    report = growth_exponent_check(series, Predictor.LAMBDA_SIGMA, sigma_exponent(0.5))
    assert report.slope > 0
    assert report.n_points >= 10
    assert report.bounded
    assert report.bound_ratio < 10.0


def test_exponent_check_excludes_infinite_entries():
    ks = np.arange(1, 11)
    lambdas = (np.pi * ks) ** 2.0
    constants = np.exp(0.5 * np.sqrt(lambdas) + 1.0)
    constants[[2, 7]] = np.inf
    report = growth_exponent_check(ConstantSeries(ks, lambdas, constants))
    assert report.n_excluded == 2
    assert report.n_points == 8
    assert report.slope == pytest.approx(0.5)
    assert report.intercept == pytest.approx(1.0)


def test_exponent_check_needs_points():
    ks = np.arange(1, 5)
    series = ConstantSeries(ks, ks ** 2.0, np.exp(ks))
    with pytest.raises(ValidationError):
        growth_exponent_check(series)
    with pytest.raises(ValidationError):
        growth_exponent_check(series, Predictor.LAMBDA_SIGMA)
