"""
Observability estimates for interval-union time sets

Constants are computed on the span of the first k_modes terminal modes of
each adjoint family. The L2-in-time constant is the top eigenvalue of the
pencil (initial-norm form, observation form); the L1-in-time constant has
a non-quadratic denominator and is only bounded from below by multistart
local maximization.
"""

import logging
from dataclasses import dataclass
from enum import Enum
from typing import List, Optional, Sequence

import numpy as np
import pandas as pd
from scipy.linalg import svd
from scipy.optimize import minimize
from scipy.stats import linregress

from . import config
from .dynamics import CoupledSystem, SwitchMode, Window
from .errors import ConvergenceError, ValidationError
from .hum import FAMILIES, adjoint_observations, modal_terminals, null_directions, stack_factor
from .intervals import IntervalSet, fat_cantor
from .utils import progress

logger = logging.getLogger(__name__)

TimeSet = IntervalSet


class TimeNorm(str, Enum):
    L2_TIME = 'L2Time'
    L1_TIME = 'L1Time'


@dataclass(frozen=True)
class TelescopeParams:
    ell: float
    ell1: float
    q: float

    def __post_init__(self):
        if not 0.0 < self.q < 1.0:
            raise ValidationError(f"q must lie in (0, 1), got {self.q}")
        if not 0.0 < self.ell1 < self.ell:
            raise ValidationError(f"Need 0 < ell1 < ell, got ell1={self.ell1}, ell={self.ell}")


@dataclass
class TelescopeSequence:
    ell: np.ndarray
    increments: np.ndarray
    tau: np.ndarray
    params: TelescopeParams

    @property
    def n_terms(self) -> int:
        return len(self.increments)


@dataclass
class ObservabilityEstimate:
    value: float
    norm: TimeNorm
    unobservable_directions: int
    l2_value: float
    maximizer: Optional[np.ndarray] = None
    certified_lower_bound: bool = False


@dataclass
class InterpolationReport:
    slope: float
    intercept: float
    r_squared: float
    excluded: int
    table: pd.DataFrame
    envelope: float
    bounded: bool

    @property
    def finite(self) -> bool:
        return bool(np.all(np.isfinite(self.table['max_ratio'])))


@dataclass
class NegativeDemoReport:
    case: int
    component: str
    max_deviation: float
    free_norm: float
    controlled_norms: List[float]
    satisfied: bool


def telescoping_sequence(params: TelescopeParams, n_terms: int) -> TelescopeSequence:
    """ell_{n+1} = ell_n + (ell - ell1)(1 - q) q^(n-1), tau_n = ell_{n+1} - (ell_{n+1} - ell_n)/6"""
    if n_terms < 1:
        raise ValidationError(f"n_terms must be positive, got {n_terms}")
    increments = (params.ell - params.ell1) * (1.0 - params.q) * params.q ** np.arange(n_terms)
    ell = np.concatenate([[params.ell1], params.ell1 + np.cumsum(increments)])
    tau = ell[1:] - increments / 6.0
    return TelescopeSequence(ell=ell, increments=increments, tau=tau, params=params)


def density_check(E: TimeSet, seq: TelescopeSequence) -> pd.DataFrame:
    """Per-piece 1/3-density of E on (ell_n, ell_{n+1}) and the derived 1/6 bound on (ell_n, tau_n)"""
    rows = []
    for i in range(seq.n_terms):
        lo, hi, tau = seq.ell[i], seq.ell[i + 1], seq.tau[i]
        length = hi - lo
        density = E.overlap_measure(lo, hi) / length
        head = E.overlap_measure(lo, tau)
        rows.append({
            'n': i + 1,
            'ell_n': lo,
            'ell_n_next': hi,
            'tau_n': tau,
            'density': density,
            'density_holds': bool(density >= config.DENSITY_FRACTION - 1e-12),
            'head_measure': head,
            'head_holds': bool(head >= length / 6.0 - 1e-12 * length),
        })
    return pd.DataFrame(rows)


def _observation_forms(system: CoupledSystem, k_modes: int, window: Optional[Window],
                       families: Sequence[str]):
    terminal, _ = modal_terminals(system, k_modes, families)
    phi0, observations = adjoint_observations(system, terminal, window)
    initial_form = phi0.T @ (system.wb[:, None] * phi0)
    step_forms = np.einsum('mnr,n,mns->mrs', observations, system.weights, observations)
    root = np.sqrt(system.dt * system.weights)[None, :, None]
    r = observations.shape[2]
    factor = stack_factor(np.zeros((0, r)), (root * observations).reshape(-1, r))
    return 0.5 * (initial_form + initial_form.T), factor, step_forms


def power_iteration(matrix: np.ndarray, rng: np.random.Generator, max_iter: int = config.POWER_ITERATION_MAX_ITER,
                    tol: float = config.POWER_ITERATION_TOL):
    """Dominant eigenpair of a symmetric PSD matrix, residual-based stopping"""
    size = matrix.shape[0]
    x = rng.standard_normal(size)
    x /= np.linalg.norm(x)
    lam, res = 0.0, np.inf
    for _ in range(max_iter):
        y = matrix @ x
        y_norm = np.linalg.norm(y)
        if y_norm == 0:
            x = rng.standard_normal(size)
            x /= np.linalg.norm(x)
            continue
        lam = float(x @ y)
        x = y / y_norm
        res = float(np.linalg.norm(matrix @ x - lam * x))
        if res <= tol * max(abs(lam), np.finfo(float).tiny):
            return float(x @ matrix @ x), x
    raise ConvergenceError("Power iteration did not converge",
                           {'iterations': max_iter, 'residual': res, 'estimate': lam})


def estimate_observability_constant(system: CoupledSystem, norm: TimeNorm = TimeNorm.L2_TIME,
                                    k_modes: int = 3, window: Optional[Window] = None,
                                    families: Sequence[str] = FAMILIES,
                                    rng: Optional[np.random.Generator] = None,
                                    starts: int = config.L1_STARTS) -> ObservabilityEstimate:
    norm = TimeNorm(norm)
    rng = np.random.default_rng(0) if rng is None else rng
    initial_form, factor, step_forms = _observation_forms(system, k_modes, window, families)

    # observation form is factor^T factor; its null space is read off the factor
    _, sigma, vt = svd(factor)
    vecs = vt.T
    null = null_directions(sigma)
    if np.any(null):
        count = int(null.sum())
        logger.warning(f"{count} terminal direction(s) produce no observation: constant is +inf")
        return ObservabilityEstimate(value=float('inf'), norm=norm, unobservable_directions=count,
                                     l2_value=float('inf'), maximizer=vecs[:, int(np.argmax(null))])

    whitener = vecs / sigma
    pencil = whitener.T @ initial_form @ whitener
    l2_value, top_vec = power_iteration(0.5 * (pencil + pencil.T), rng)
    l2_xi = whitener @ top_vec
    l2_xi /= np.linalg.norm(l2_xi)
    if norm is TimeNorm.L2_TIME:
        return ObservabilityEstimate(value=l2_value, norm=norm, unobservable_directions=0,
                                     l2_value=l2_value, maximizer=l2_xi)

    def neg_log_ratio(xi):
        num = float(xi @ initial_form @ xi)
        per_step = np.sqrt(np.maximum(np.einsum('r,mrs,s->m', xi, step_forms, xi), 0.0))
        total = system.dt * per_step.sum()
        safe = np.where(per_step > 0, per_step, 1.0)
        d_total = system.dt * np.einsum('mrs,s,m->r', step_forms, xi, (per_step > 0) / safe)
        value = -np.log(num) + 2.0 * np.log(total)
        grad = -2.0 * (initial_form @ xi) / num + 2.0 * d_total / total
        return value, grad

    candidates = [l2_xi] + [_unit(rng.standard_normal(len(l2_xi))) for _ in range(max(starts - 1, 0))]
    best_value, best_xi = -neg_log_ratio(l2_xi)[0], l2_xi
    for start in progress(candidates, desc='L1 multistart'):
        result = minimize(neg_log_ratio, start, jac=True, method='L-BFGS-B')
        value = -float(result.fun)
        if np.isfinite(value) and value > best_value:
            best_value, best_xi = value, result.x / np.linalg.norm(result.x)

    l1_value = float(np.exp(best_value))
    logger.info(f"L1-time observability lower bound {l1_value:.4e} (L2-time {l2_value:.4e})")
    return ObservabilityEstimate(value=l1_value, norm=norm, unobservable_directions=0, l2_value=l2_value,
                                 maximizer=best_xi, certified_lower_bound=True)


def monotone_chain(system_factory, time_sets: Sequence[TimeSet], **kwargs) -> List[float]:
    """Observability constants along a chain of time sets (system_factory(E) -> CoupledSystem)"""
    return [estimate_observability_constant(system_factory(E), **kwargs).value for E in time_sets]


def fat_cantor_chain(T: float, levels: Sequence[int]) -> List[TimeSet]:
    return [fat_cantor(T, level) for level in levels]


def telescope_trace(system: CoupledSystem, pT: np.ndarray, wT: np.ndarray, seq: TelescopeSequence) -> pd.DataFrame:
    """A_n = ||(p, w)(ell_n)|| and int_{ell_n}^{ell_{n+1}} chi_E B(t) dt on one adjoint run,
    B(t) = ||p(t)||_{L2(G2)} + ||w(t)||_{L2(G1)}"""
    trajectory = system.adjoint(pT, wT)
    times = trajectory.times
    norms = np.sqrt(trajectory.energy(system.weights))

    p_mid = 0.5 * (trajectory.p[1:] + trajectory.p[:-1])
    w_mid = 0.5 * (trajectory.w[1:] + trajectory.w[:-1])
    b_values = (np.sqrt((p_mid ** 2 * system.mask_g2) @ system.weights)
                + np.sqrt((w_mid ** 2 * system.mask_g1) @ system.weights))
    mids = 0.5 * (times[1:] + times[:-1])
    gated = system.setup.E.indicator(mids) * b_values

    rows = []
    for i in range(seq.n_terms):
        lo, hi = seq.ell[i], seq.ell[i + 1]
        inside = (mids > lo) & (mids < hi)
        rows.append({
            'n': i + 1,
            'ell_n': lo,
            'A_n': float(np.interp(lo, times, norms)),
            'A_n_next': float(np.interp(hi, times, norms)),
            'integral_B': float(system.dt * gated[inside].sum()),
            'steps': int(inside.sum()),
        })
    return pd.DataFrame(rows)


def interpolation_blowup_fit(system: CoupledSystem, times: Sequence[float], sigma: float,
                             rng: np.random.Generator, samples: int = 8, k_modes: int = 10) -> InterpolationReport:
    """Fit log max_samples R(t) against (T - t)^(sigma/(sigma - 1))"""
    if sigma == 1.0:
        raise ValidationError("sigma = 1 has no interpolation exponent")
    if len(times) < 3:
        raise ValidationError("Need at least three sample times")
    T = system.T
    steps = []
    for t in times:
        m = int(round(t / system.dt))
        if not 0 <= m < system.n_steps:
            raise ValidationError(f"Sample time {t} must lie in [0, T - dt]")
        steps.append(m)

    terminal, _ = modal_terminals(system, min(k_modes, system.n), FAMILIES)
    exponent = sigma / (sigma - 1.0)
    n = system.n
    max_ratio = np.zeros(len(steps))
    excluded = 0
    for _ in range(samples):
        xi = rng.standard_normal(terminal.shape[1])
        phi_t = terminal @ xi
        terminal_norm = float(np.sqrt(system.wb @ phi_t ** 2))
        _, history = system.adjoint_sweep(phi_t, keep_history=True)
        for j, m in enumerate(steps):
            w, p = history[m, :n, 0], history[m, n:, 0]
            full = float(system.weights @ (p ** 2 + w ** 2))
            observed = float(system.weights @ (p ** 2 * system.mask_g2 + w ** 2 * system.mask_g1))
            if observed <= 0 or terminal_norm <= 0:
                excluded += 1
                continue
            max_ratio[j] = max(max_ratio[j], full / (np.sqrt(observed) * terminal_norm))

    sample_times = np.array(steps) * system.dt
    predictor = (T - sample_times) ** exponent
    table = pd.DataFrame({'t': sample_times, 'predictor': predictor, 'max_ratio': max_ratio})
    usable = max_ratio > 0
    if usable.sum() < 3:
        raise ValidationError("Too few sample times with a nonzero observation")
    log_ratio = np.log(max_ratio[usable])
    fit = linregress(predictor[usable], log_ratio)
    # smallest K with log R <= K (1 + predictor) on the sampled grid
    envelope = float(np.max(np.maximum(log_ratio, 0.0) / (1.0 + predictor[usable])))
    bounded = bool(np.all(np.isfinite(max_ratio)) and envelope <= config.INTERPOLATION_ENVELOPE_LIMIT)
    if not bounded:
        logger.warning(f"Interpolation ratio not linearly bounded: envelope {envelope:.3g}")
    return InterpolationReport(slope=float(fit.slope), intercept=float(fit.intercept),
                               r_squared=float(fit.rvalue ** 2), excluded=excluded, table=table,
                               envelope=envelope, bounded=bounded)


def negative_demo(system: CoupledSystem, case: int, y0: np.ndarray, z0: np.ndarray,
                  rng: np.random.Generator, runs: int = config.NEGATIVE_DEMO_RUNS) -> NegativeDemoReport:
    """Show that one component at T does not depend on the control.

    case 1: chi_E = 1 and c = 0, so z never sees y or u.
    case 2: chi_F = 1 and b = 0, so y never sees z or u.
    """
    setup, coeffs, T = system.setup, system.coeffs, system.T
    tol = 1e-12 * T
    if case == 1:
        if (setup.mode is not SwitchMode.ALTERNATING or setup.E.measure < T - tol
                or coeffs.c.sup_norm != 0.0):
            raise ValidationError("Case 1 needs chi_E = 1 on (0, T) and c = 0")
        component = 'z'
    elif case == 2:
        if (setup.mode is not SwitchMode.ALTERNATING or setup.F.measure < T - tol
                or coeffs.b.sup_norm != 0.0):
            raise ValidationError("Case 2 needs chi_F = 1 on (0, T) and b = 0")
        component = 'y'
    else:
        raise ValidationError(f"Unknown negative case {case}")

    free = getattr(system.forward(y0, z0).final, component)
    free_norm = float(np.sqrt(system.weights @ free ** 2))
    deviation = 0.0
    controlled = []
    for _ in progress(range(runs), desc=f'negative case {case}', total=runs):
        control = system.make_control(rng.standard_normal((system.n_steps, system.n)))
        final = getattr(system.forward(y0, z0, control).final, component)
        deviation = max(deviation, float(np.max(np.abs(final - free))))
        controlled.append(float(np.sqrt(system.weights @ final ** 2)))

    satisfied = deviation <= config.NEGATIVE_DEMO_TOL * max(1.0, free_norm)
    logger.info(f"Negative case {case}: {component}(T) deviation {deviation:.3e}, "
                f"free norm {free_norm:.6e}, satisfied={satisfied}")
    return NegativeDemoReport(case=case, component=component, max_deviation=deviation, free_norm=free_norm,
                              controlled_norms=controlled, satisfied=satisfied)


def _unit(v: np.ndarray) -> np.ndarray:
    return v / np.linalg.norm(v)
