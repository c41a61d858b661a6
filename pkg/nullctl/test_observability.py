import numpy as np
import pytest

from nullctl import config
from nullctl.dynamics import SwitchMode
from nullctl.errors import ValidationError
from nullctl.intervals import IntervalSet
from nullctl.observability import (TelescopeParams, TimeNorm, density_check, estimate_observability_constant,
                                   fat_cantor_chain, interpolation_blowup_fit, monotone_chain, negative_demo,
                                   power_iteration, telescope_trace, telescoping_sequence)

SHARED = SwitchMode.SHARED_TIME_SET


def test_telescoping_sequence():
    seq = telescoping_sequence(TelescopeParams(ell=0.9, ell1=0.5, q=0.5), 12)
    np.testing.assert_allclose(seq.increments[1:] / seq.increments[:-1], 0.5, rtol=1e-12)
    assert seq.ell[0] == 0.5
    assert seq.ell[-1] == pytest.approx(0.9 - 0.4 * 0.5 ** 12)
    assert np.all((seq.tau > seq.ell[:-1]) & (seq.tau < seq.ell[1:]))
    np.testing.assert_allclose(seq.ell[1:] - seq.tau, seq.increments / 6.0)


@pytest.mark.parametrize('kwargs', [dict(q=1.0), dict(q=0.0), dict(ell1=0.95), dict(ell1=0.0)])
def test_telescope_params_validation(kwargs):
    params = dict(ell=0.9, ell1=0.5, q=0.5)
    params.update(kwargs)
    with pytest.raises(ValidationError):
        TelescopeParams(**params)


def test_telescoping_needs_terms():
    with pytest.raises(ValidationError):
        telescoping_sequence(TelescopeParams(0.9, 0.5, 0.5), 0)


def test_density_check():
    seq = telescoping_sequence(TelescopeParams(ell=1.0, ell1=0.5, q=0.5), 5)
    full = density_check(IntervalSet([(0.0, 1.0)]), seq)
    assert full['density'].tolist() == pytest.approx([1.0] * 5)
    assert full['density_holds'].all() and full['head_holds'].all()

    sparse_set = density_check(IntervalSet([(0.0, 0.5625)]), seq)
    assert sparse_set['density'].iloc[0] == pytest.approx(0.25)
    assert not sparse_set['density_holds'].any()


def test_power_iteration_finds_top_eigenpair(rng):
    a = rng.standard_normal((6, 6))
    matrix = a @ a.T
    value, vec = power_iteration(matrix, rng)
    assert value == pytest.approx(np.linalg.eigvalsh(matrix)[-1], rel=1e-8)
    assert np.linalg.norm(vec) == pytest.approx(1.0)


def test_single_mode_constant_matches_closed_form(make_system):
    T = 1.0
    system = make_system(n=48, coefficients=(0.0, 0.0, 0.0, 0.0), dt=1e-3, mode=SHARED, E=((0.0, T),))
    estimate = estimate_observability_constant(system, k_modes=1, families=('p',))
    lam = system.deg_basis.values[0]
    e1 = system.deg_basis.vectors[:, 0]
    local = float(system.weights @ (system.mask_g2 * e1 ** 2))
    expected = 2.0 * lam * np.exp(-2.0 * lam * T) / (local * (1.0 - np.exp(-2.0 * lam * T)))
    assert estimate.value == pytest.approx(expected, rel=0.05)
    assert estimate.norm is TimeNorm.L2_TIME


def test_l1_estimate_dominates_scaled_l2(make_system, rng):
    T = 2.0
    system = make_system(n=16, T=T, coefficients=(0.1, 0.2, 0.5, -0.1), dt=1.0 / 500, mode=SHARED,
                         E=((0.2, 1.4),))
    estimate = estimate_observability_constant(system, TimeNorm.L1_TIME, k_modes=2, rng=rng, starts=4)
    assert estimate.certified_lower_bound
    assert estimate.value >= estimate.l2_value / T * (1.0 - 1e-9)
    assert np.linalg.norm(estimate.maximizer) == pytest.approx(1.0)


def test_coupled_shared_window_is_observable(make_system):
    system = make_system(n=16, T=2.0, coefficients=(0.1, 0.2, 0.5, -0.1), dt=1.0 / 500, mode=SHARED,
                         E=((0.2, 1.4),))
    estimate = estimate_observability_constant(system, k_modes=2)
    assert estimate.unobservable_directions == 0
    assert np.isfinite(estimate.value) and estimate.value > 0
    assert estimate.value == estimate.l2_value


def test_unobserved_family_gives_infinite_constant(make_system):
    system = make_system(n=16, coefficients=(0.0, 0.0, 0.0, 0.0), dt=1.0 / 100, E=((0.0, 1.0),), F=())
    estimate = estimate_observability_constant(system, k_modes=2)
    assert estimate.value == float('inf')
    assert estimate.unobservable_directions == 2


def test_constants_grow_along_fat_cantor_chain(make_system):
    T = 1.0
    chain = fat_cantor_chain(T, [0, 1, 2, 3])

    def factory(E):
        return make_system(n=16, coefficients=(0.1, 0.2, 0.5, -0.1), dt=1.0 / 1024, mode=SHARED,
                           E=E.intervals)

    values = monotone_chain(factory, chain, k_modes=2)
    assert all(np.isfinite(values))
    for coarse, fine in zip(values, values[1:]):
        assert fine >= coarse * (1.0 - 1e-9)


def test_telescope_trace_on_uncoupled_run(make_system, rng):
    system = make_system(n=24, coefficients=(0.0, 0.0, 0.0, 0.0), dt=1e-3, mode=SHARED, E=((0.0, 1.0),))
    seq = telescoping_sequence(TelescopeParams(ell=0.9, ell1=0.5, q=0.5), 4)
    table = telescope_trace(system, rng.standard_normal(24), rng.standard_normal(24), seq)
    assert list(table.columns) == ['n', 'ell_n', 'A_n', 'A_n_next', 'integral_B', 'steps']
    assert np.all(table['A_n'] <= table['A_n_next'])
    assert np.all(table['integral_B'] > 0)
    assert table['steps'].tolist() == [200, 100, 50, 25]


def test_interpolation_blowup_fit(make_system, rng):
    system = make_system(n=24, coefficients=(0.1, 0.2, 0.5, -0.1), dt=1.0 / 200)
    report = interpolation_blowup_fit(system, [0.5, 0.6, 0.7, 0.8, 0.9], 0.75, rng, samples=4, k_modes=5)
    assert report.excluded == 0
    assert report.finite
    assert len(report.table) == 5
    assert np.isfinite(report.slope)
    np.testing.assert_allclose(report.table['predictor'], (1.0 - report.table['t']) ** -3.0)
    log_ratio = np.maximum(np.log(report.table['max_ratio']), 0.0)
    assert report.envelope == pytest.approx(np.max(log_ratio / (1.0 + report.table['predictor'])))
    assert np.all(log_ratio <= report.envelope * (1.0 + report.table['predictor']) + 1e-12)
    assert report.bounded


def test_interpolation_verdict_uses_envelope_limit(coupled_system, rng, monkeypatch):
    monkeypatch.setattr(config, 'INTERPOLATION_ENVELOPE_LIMIT', -1.0)
    report = interpolation_blowup_fit(coupled_system, [0.5, 0.7, 0.9], 0.75, rng, samples=2, k_modes=3)
    assert report.finite
    assert not report.bounded


def test_interpolation_fit_validation(coupled_system, rng):
    with pytest.raises(ValidationError):
        interpolation_blowup_fit(coupled_system, [0.2, 0.4, 0.6], 1.0, rng)
    with pytest.raises(ValidationError):
        interpolation_blowup_fit(coupled_system, [0.2, 0.4], 0.75, rng)
    with pytest.raises(ValidationError):
        interpolation_blowup_fit(coupled_system, [0.2, 0.4, 1.0], 0.75, rng)


def test_negative_case_one(make_system, rng):
    system = make_system(n=24, coefficients=(0.0, 0.3, 0.0, 0.0), dt=1.0 / 100, E=((0.0, 1.0),), F=())
    y0, z0 = rng.standard_normal(24), rng.standard_normal(24)
    report = negative_demo(system, 1, y0, z0, rng, runs=4)
    assert report.component == 'z'
    assert report.satisfied
    assert len(report.controlled_norms) == 4
    np.testing.assert_allclose(report.controlled_norms, report.free_norm, rtol=1e-9)


def test_negative_case_two(make_system, rng):
    system = make_system(n=24, coefficients=(0.0, 0.0, 0.4, 0.0), dt=1.0 / 100, E=(), F=((0.0, 1.0),))
    report = negative_demo(system, 2, rng.standard_normal(24), rng.standard_normal(24), rng, runs=4)
    assert report.component == 'y'
    assert report.satisfied


def test_negative_demo_checks_preconditions(coupled_system, rng):
    zeros = np.zeros(24)
    with pytest.raises(ValidationError):
        negative_demo(coupled_system, 1, zeros, zeros, rng, runs=1)
    with pytest.raises(ValidationError):
        negative_demo(coupled_system, 3, zeros, zeros, rng, runs=1)
