"""
Command pipelines behind the CLI

Each pipeline fills a ReportBundle from a validated config; run() owns the
exit-code contract: 0 on success, 2 on invalid input, 3 on numerical or
I/O failure.
"""

import logging
import sys
import time
from typing import Callable, Dict, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from pydantic import ValidationError as ConfigValidationError

from . import config
from .dynamics import ControlSignal, CoupledSystem
from .errors import ConvergenceError, ValidationError
from .experiment_config import (HumConfig, LrConfig, NegativeConfig, ObservabilityConfig, ScheduleConfig,
                                SpectralConstantConfig, SpectrumConfig, load_config)
from .hum import FAMILIES, HumProblem, estimate_observability_from_control, modal_terminals, \
    partial_control_bound_terms, synthesize_partial_control
from .intervals import IntervalSet, fat_cantor
from .lr_synth import bound_tracking, plan_schedule, synthesize_switching_control
from .observability import (TelescopeParams, density_check, estimate_observability_constant,
                            interpolation_blowup_fit, negative_demo, telescope_trace, telescoping_sequence)
from .report import ReportBundle, diagnostics_table, emit_report
from .spectral_core import OperatorKind, bessel_eigenvalues, build_operator, eigendecompose, eigenvalue_growth_fit
from .spectral_ineq import Predictor, constant_series, growth_exponent_check, sigma_exponent

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_FAILED = 3


def _norm(system: CoupledSystem, v: np.ndarray) -> float:
    return float(np.sqrt(system.weights @ (v ** 2)))


def _control_table(system: CoupledSystem, control: ControlSignal) -> pd.DataFrame:
    outside = np.where(control.support, 0.0, np.abs(control.values)).max(axis=1)
    return pd.DataFrame({
        't': control.times,
        'gate_y': control.gate_y.astype(int),
        'gate_z': control.gate_z.astype(int),
        'control_norm': np.sqrt((control.values ** 2) @ system.weights),
        'outside_support': outside,
    })


def run_spectrum(cfg: SpectrumConfig, rng: np.random.Generator, bundle: ReportBundle):
    mat = build_operator(cfg.kind, cfg.n, cfg.alpha, cfg.effective_grading)
    basis = eigendecompose(mat, cfg.k)
    ks = np.arange(1, basis.size + 1)
    if not cfg.bessel_oracle:
        oracle = np.full(basis.size, np.nan)
    elif cfg.kind is OperatorKind.LAPLACIAN:
        oracle = (np.pi * ks) ** 2
    else:
        oracle = bessel_eigenvalues(cfg.alpha, basis.size)
    bundle.add('eigenvalues', pd.DataFrame({
        'k': ks,
        'eigenvalue': basis.values,
        'oracle': oracle,
        'relative_error': np.abs(basis.values - oracle) / oracle,
        'residual': basis.residuals,
    }))
    logger.info(f"{cfg.kind.value} spectrum n={cfg.n}: lambda_1={basis.values[0]:.6f}")

    try:
        growth = eigenvalue_growth_fit(basis, cfg.fit_k_min, cfg.fit_k_max)
    except ValidationError as exc:
        logger.warning(f"Growth fit skipped: {exc}")
        return
    bundle.add('growth', pd.DataFrame([{
        'exponent': growth.exponent, 'prefactor': growth.prefactor, 'residual': growth.residual,
        'k_min': growth.k_min, 'k_max': growth.k_max,
    }]))


def run_spectral_constant(cfg: SpectralConstantConfig, rng: np.random.Generator, bundle: ReportBundle):
    mat = build_operator(cfg.kind, cfg.n, cfg.alpha, cfg.effective_grading)
    basis = eigendecompose(mat, cfg.k_max)
    region = IntervalSet(cfg.region)
    series = constant_series(basis, region, mat.grid.centers, range(cfg.k_min, cfg.k_max + 1))

    if cfg.kind is OperatorKind.LAPLACIAN:
        predictor, sigma = Predictor.SQRT_LAMBDA, None
        x = np.sqrt(series.lambdas)
    else:
        predictor, sigma = Predictor.LAMBDA_SIGMA, sigma_exponent(cfg.alpha, cfg.gamma)
        x = series.lambdas ** sigma
    with np.errstate(divide='ignore'):
        log_c = np.log(series.constants)
    bundle.add('constants', pd.DataFrame({
        'k': series.ks, 'eigenvalue': series.lambdas, 'constant': series.constants,
        'log_constant': log_c, 'predictor': x, 'ratio': log_c / x,
    }))

    try:
        fit = growth_exponent_check(series, predictor, sigma)
    except ValidationError as exc:
        logger.warning(f"Exponent check skipped: {exc}")
        return
    bundle.add('fit', pd.DataFrame([{
        'predictor': predictor.value, 'sigma': sigma if sigma is not None else np.nan,
        'slope': fit.slope, 'intercept': fit.intercept, 'r_squared': fit.r_squared,
        'bound_ratio': fit.bound_ratio, 'bounded': fit.bounded,
        'n_points': fit.n_points, 'n_excluded': fit.n_excluded,
    }]))


def run_hum(cfg: HumConfig, rng: np.random.Generator, bundle: ReportBundle):
    system = cfg.build_system()
    y0, z0 = cfg.initial_data(system, rng)
    window = tuple(cfg.window) if cfg.window is not None else (0.0, system.T)
    result = synthesize_partial_control(HumProblem(system, window, cfg.k, y0, z0, cfg.regularization))

    initial_norm = float(np.sqrt(system.weights @ (y0 ** 2 + z0 ** 2)))
    final = result.trajectory.final
    terms = partial_control_bound_terms(system, cfg.k, window[1] - window[0], cfg.gamma)
    bundle.add('summary', pd.DataFrame([{
        'k': cfg.k, 'window_start': window[0], 'window_end': window[1],
        'initial_norm': initial_norm,
        'projected_residual': float(np.sqrt(result.projected_residual)),
        'relative_residual': float(np.sqrt(result.projected_residual)) / initial_norm if initial_norm > 0 else 0.0,
        'y_final_norm': _norm(system, final.y), 'z_final_norm': _norm(system, final.z),
        'control_energy': result.control_energy, 'gramian_condition': result.gramian_condition,
        'regularization': result.regularization, 'log_cost_predictor': terms['log_cost_predictor'],
    }]))
    bundle.add('control', _control_table(system, result.control))
    trajectory = result.trajectory
    bundle.add('trajectory', pd.DataFrame({
        't': trajectory.times,
        'y_norm': np.sqrt((trajectory.y ** 2) @ system.weights),
        'z_norm': np.sqrt((trajectory.z ** 2) @ system.weights),
    }))


def run_lr(cfg: LrConfig, rng: np.random.Generator, bundle: ReportBundle):
    system = cfg.build_system(time_multiple=2 ** (cfg.k_max + 1))
    schedule = plan_schedule(cfg.T, cfg.C0, cfg.k_max, cfg.rho_cap)
    bundle.add('schedule', schedule.to_frame())
    y0, z0 = cfg.initial_data(system, rng)

    result = synthesize_switching_control(system, y0, z0, schedule)
    bounds = bound_tracking(result)
    bundle.add('stages', result.per_stage.to_frame())
    bundle.add('bounds', bounds.to_frame())
    bundle.add('control', _control_table(system, result.control))
    y_norm, z_norm = result.terminal_norms
    bundle.add('summary', pd.DataFrame([{
        'initial_norm': result.initial_norm,
        'y_final_norm': y_norm,
        'z_final_norm': z_norm,
        'relative_terminal': (y_norm + z_norm) / result.initial_norm if result.initial_norm > 0 else 0.0,
        'total_energy': bounds.total_energy,
        'L_measured': bounds.L_measured,
        'eventually_contracting': bounds.eventually_contracting,
        'decreasing': bounds.decreasing,
        'crossover_stage': bounds.crossover_stage if bounds.crossover_stage is not None else -1,
    }]))


def run_observability(cfg: ObservabilityConfig, rng: np.random.Generator, bundle: ReportBundle):
    system = cfg.build_system()
    families = tuple(cfg.families)

    rows = []
    for norm in cfg.norms:
        estimate = estimate_observability_constant(system, norm, cfg.k_modes, families=families, rng=rng)
        rows.append({'norm': estimate.norm.value, 'value': estimate.value, 'l2_value': estimate.l2_value,
                     'unobservable_directions': estimate.unobservable_directions,
                     'certified_lower_bound': estimate.certified_lower_bound})
    bundle.add('estimates', pd.DataFrame(rows))

    from_control = estimate_observability_from_control(system, cfg.k_modes, cfg.control_samples, rng,
                                                       families=families)
    bundle.add('control_estimate', pd.DataFrame({
        'sample': np.arange(1, cfg.control_samples + 1),
        'ratio': from_control.ratios,
        'control_ratio': from_control.control_ratios,
    }))

    chain = []
    previous = None
    for level in cfg.cantor_levels:
        E = fat_cantor(cfg.T, level)
        value = estimate_observability_constant(cfg.build_system(E=E), 'L2Time', cfg.k_modes,
                                                families=families, rng=rng).value
        monotone = previous is None or value >= previous * (1.0 - 1e-9)
        chain.append({'level': level, 'measure': E.measure, 'intervals': len(E), 'value': value,
                      'monotone': bool(monotone)})
        previous = value
    bundle.add('cantor_chain', pd.DataFrame(chain))

    seq = telescoping_sequence(TelescopeParams(cfg.ell, cfg.ell1, cfg.q), cfg.n_terms)
    bundle.add('density', density_check(system.setup.E, seq))
    terminal, _ = modal_terminals(system, min(cfg.k_modes, system.n), FAMILIES)
    phi_t = terminal @ rng.standard_normal(terminal.shape[1])
    bundle.add('telescope', telescope_trace(system, phi_t[system.n:], phi_t[:system.n], seq))

    sigma = sigma_exponent(cfg.alpha, cfg.gamma)
    report = interpolation_blowup_fit(system, cfg.interpolation_times, sigma, rng,
                                      samples=cfg.interpolation_samples, k_modes=cfg.k_modes)
    bundle.add('interpolation', report.table)
    bundle.add('interpolation_fit', pd.DataFrame([{
        'sigma': sigma, 'slope': report.slope, 'intercept': report.intercept,
        'r_squared': report.r_squared, 'excluded': report.excluded, 'finite': report.finite,
        'envelope': report.envelope, 'bounded': report.bounded,
    }]))


def run_negative(cfg: NegativeConfig, rng: np.random.Generator, bundle: ReportBundle):
    system = cfg.build_system()
    y0, z0 = cfg.initial_data(system, rng)
    report = negative_demo(system, cfg.case, y0, z0, rng, cfg.runs)
    bundle.add('summary', pd.DataFrame([{
        'case': report.case, 'component': report.component, 'max_deviation': report.max_deviation,
        'free_norm': report.free_norm, 'satisfied': report.satisfied,
    }]))
    bundle.add('runs', pd.DataFrame({
        'run': np.arange(1, len(report.controlled_norms) + 1),
        'controlled_norm': report.controlled_norms,
    }))


def run_schedule(cfg: ScheduleConfig, rng: np.random.Generator, bundle: ReportBundle):
    bundle.add('schedule', plan_schedule(cfg.T, cfg.C0, cfg.k_max, cfg.rho_cap).to_frame())


PIPELINES: Dict[str, Callable] = {
    'spectrum': run_spectrum,
    'spectral-constant': run_spectral_constant,
    'hum': run_hum,
    'lr': run_lr,
    'observability': run_observability,
    'negative': run_negative,
    'schedule': run_schedule,
}


def _fail(message: str):
    logger.error(message)
    sys.stderr.write(message + '\n')


def run(command: str, config_path: Optional[str] = None, overrides: Sequence[str] = (),
        seed: Optional[int] = None, output_dir: Optional[str] = None) -> Tuple[int, Optional[ReportBundle]]:
    """Parse, execute and report one command; returns (exit code, bundle)"""
    directory = output_dir or config.OUTPUT_DIR
    try:
        cfg = load_config(command, config_path, overrides, seed)
    except (ValidationError, ConfigValidationError, OSError) as exc:
        _fail(f"Invalid configuration for '{command}': {exc}")
        return EXIT_INVALID, None

    rng = np.random.default_rng(cfg.seed)
    bundle = ReportBundle(command=command, config=cfg.model_dump(mode='json'), seed=cfg.seed)
    logger.info(f"Running '{command}' with seed {cfg.seed}")
    start = time.perf_counter()
    try:
        PIPELINES[command](cfg, rng, bundle)
    except ValidationError as exc:
        _fail(f"Invalid input for '{command}': {exc}")
        return EXIT_INVALID, None
    except ConvergenceError as exc:
        _fail(f"'{command}' failed to converge: {exc}")
        bundle.status = 'failed'
        bundle.tables = {'diagnostics': diagnostics_table(exc)}
        bundle.timing = {'seconds': time.perf_counter() - start}
        try:
            emit_report(bundle, directory)
        except OSError as io_exc:
            _fail(f"Diagnostics could not be written to {directory}: {io_exc}")
        return EXIT_FAILED, bundle

    bundle.timing = {'seconds': time.perf_counter() - start}
    try:
        emit_report(bundle, directory)
    except OSError as exc:
        _fail(f"Writing the report to {directory} failed, output may be partial: {exc}")
        return EXIT_FAILED, bundle
    return EXIT_OK, bundle
