"""
Lebeau-Robbiano switching-control synthesis

The horizon is cut into dyadic stages [T_k, T~_k] (active, HUM on rho_k
modes) followed by [T~_k, T_{k+1}] (passive decay), with
T~_k - T_k = T_{k+1} - T~_k = T 2^(-k-1) and rho_k = round(C0^(k/2)).
After the last stage the state evolves freely up to T.
"""

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np
import pandas as pd

from . import config
from .dynamics import ControlSignal, CouplingCoefficients, CoupledSystem, SwitchMode, SwitchingSetup, Trajectory
from .errors import ConvergenceError, StageSynthesisError, ValidationError
from .hum import HumProblem, log_control_cost_predictor, synthesize_partial_control
from .spectral_ineq import sigma_exponent
from .utils import progress

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Stage:
    index: int
    t_start: float
    t_switch: float
    t_end: float
    rho: int

    @property
    def active(self) -> Tuple[float, float]:
        return self.t_start, self.t_switch

    @property
    def passive(self) -> Tuple[float, float]:
        return self.t_switch, self.t_end


@dataclass
class Schedule:
    T: float
    C0: float
    stages: List[Stage]
    rho_cap: Optional[int] = None

    @property
    def k_max(self) -> int:
        return len(self.stages)

    @property
    def tail(self) -> Tuple[float, float]:
        return self.stages[-1].t_end, self.T

    @property
    def covered(self) -> float:
        return sum(s.t_end - s.t_start for s in self.stages)

    def rho_for(self, k: int) -> int:
        return _rho(self.C0, k, self.rho_cap)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([{
            'stage': s.index, 'T_k': s.t_start, 'T_tilde_k': s.t_switch,
            'T_k_next': s.t_end, 'rho_k': s.rho,
        } for s in self.stages])


@dataclass
class HypothesisReport:
    h1: Optional[Tuple[float, int]]
    h2: Optional[Tuple[float, int]]

    @property
    def holds(self) -> bool:
        return self.h1 is not None or self.h2 is not None

    @property
    def note(self) -> str:
        if self.holds:
            return 'H1' if self.h1 is not None else 'H2'
        return 'neither H1 nor H2 holds: negative-controllability configuration'


@dataclass
class StageRecord:
    stage: int
    rho: int
    norm_start: float
    norm_switch: float
    norm_end: float
    annihilation: float
    control_energy: float
    gramian_condition: float
    alpha_k: float
    beta_k: float
    theta_measured: float
    theta_theory: float
    log_cost_predictor: float


@dataclass
class LrBookkeeping:
    stages: List[StageRecord] = field(default_factory=list)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([vars(record) for record in self.stages])


@dataclass
class SwitchingControlResult:
    control: ControlSignal
    trajectory: Trajectory
    terminal_norms: Tuple[float, float]
    per_stage: LrBookkeeping
    schedule: Schedule
    initial_norm: float


@dataclass
class BoundReport:
    contraction_factors: np.ndarray
    stage_energies: np.ndarray
    total_energy: float
    L_measured: float
    eventually_contracting: bool
    decreasing: bool
    crossover_stage: Optional[int]

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({
            'stage': np.arange(1, len(self.contraction_factors) + 1),
            'contraction_factor': self.contraction_factors,
            'control_energy': self.stage_energies,
        })


def _rho(C0: float, k: int, rho_cap: Optional[int]) -> int:
    rho = int(round(C0 ** (0.5 * k)))
    return rho if rho_cap is None else min(rho, int(rho_cap))


def plan_schedule(T: float, C0: float = config.DEFAULT_C0, k_max: int = config.DEFAULT_K_MAX,
                  rho_cap: Optional[int] = None) -> Schedule:
    if not T > 0:
        raise ValidationError(f"Horizon must be positive, got {T}")
    if not C0 > config.MIN_C0:
        raise ValidationError(f"C0 must exceed {config.MIN_C0:g}, got {C0}")
    if int(k_max) != k_max or k_max < 1:
        raise ValidationError(f"k_max must be a positive integer, got {k_max}")
    if rho_cap is not None and rho_cap < 1:
        raise ValidationError(f"rho_cap must be positive, got {rho_cap}")

    stages = []
    t_start = 0.0
    for k in range(1, int(k_max) + 1):
        half = T * 2.0 ** (-k - 1)
        stages.append(Stage(index=k, t_start=t_start, t_switch=t_start + half,
                            t_end=t_start + 2 * half, rho=_rho(C0, k, rho_cap)))
        t_start += 2 * half
    return Schedule(T=float(T), C0=float(C0), stages=stages, rho_cap=rho_cap)


def validate_hypotheses(coeffs: CouplingCoefficients, setup: SwitchingSetup) -> HypothesisReport:
    """Best sign-definite lower bound of |c| on an E-interval (H1) and of |b| on an F-interval (H2)"""

    def best(func, intervals) -> Optional[Tuple[float, int]]:
        found = None
        for i, (start, end) in enumerate(intervals):
            values = func.values_on(start, end)
            if values.size == 0:
                continue
            if values.min() > 0:
                level = float(values.min())
            elif values.max() < 0:
                level = float(-values.max())
            else:
                continue
            if found is None or level > found[0]:
                found = (level, i)
        return found

    report = HypothesisReport(h1=best(coeffs.c, setup.E.intervals), h2=best(coeffs.b, setup.F.intervals))
    logger.info(f"Hypotheses: H1={report.h1}, H2={report.h2}")
    return report


def _check_stage_gates(system: CoupledSystem, stage: Stage, report: Optional[HypothesisReport]):
    setup = system.setup
    start, end = stage.active
    if setup.mode is SwitchMode.SHARED_TIME_SET or report is None:
        if setup.E.overlap_measure(start, end) <= 0:
            raise ValidationError(f"Stage {stage.index}: E does not meet the active interval")
        return
    usable = ((report.h1 is not None and setup.E.overlap_measure(start, end) > 0)
              or (report.h2 is not None and setup.F.overlap_measure(start, end) > 0))
    if not usable:
        raise ValidationError(f"Stage {stage.index}: no gate of the H1/H2 branch meets [{start}, {end}]")


def synthesize_switching_control(system: CoupledSystem, y0: np.ndarray, z0: np.ndarray,
                                 schedule: Schedule) -> SwitchingControlResult:
    setup = system.setup
    if abs(schedule.T - setup.T) > 1e-12 * setup.T:
        raise ValidationError(f"Schedule horizon {schedule.T} differs from setup horizon {setup.T}")

    report = None
    if setup.mode is SwitchMode.ALTERNATING:
        report = validate_hypotheses(system.coeffs, setup)
        if not report.holds:
            raise ValidationError(f"Switching synthesis needs H1 or H2: {report.note}")

    max_rho = max(s.rho for s in schedule.stages)
    if max_rho > system.n // 4:
        raise ValidationError(f"Projector size {max_rho} exceeds the resolvable modes n/4={system.n // 4}")
    for stage in schedule.stages:
        for t in (stage.t_start, stage.t_switch, stage.t_end):
            system.step_of(t)
        _check_stage_gates(system, stage, report)

    y0 = np.asarray(y0, dtype=float)
    z0 = np.asarray(z0, dtype=float)
    initial_norm = float(np.sqrt(system.weights @ (y0 ** 2 + z0 ** 2)))
    sigma = sigma_exponent(system.degenerate.spec.alpha)

    values = np.zeros((system.n_steps, system.n))
    bookkeeping = LrBookkeeping()
    thetas = theoretical_thetas(system, schedule)
    y, z = y0, z0
    for stage in progress(schedule.stages, desc='LR stages'):
        norm_start = float(np.sqrt(system.weights @ (y ** 2 + z ** 2)))
        try:
            result = synthesize_partial_control(HumProblem(system, stage.active, stage.rho, y, z))
        except ConvergenceError as exc:
            raise StageSynthesisError(stage.index, str(exc), exc.diagnostics) from exc

        m0, m1 = system.window_steps(stage.active)
        values[m0:m1] = result.control.values
        switched = result.trajectory.final
        passive = system.forward(switched.y, switched.z, window=stage.passive)
        y, z = passive.final.y, passive.final.z

        norm_switch = float(np.sqrt(system.weights @ (switched.y ** 2 + switched.z ** 2)))
        norm_end = float(np.sqrt(system.weights @ (y ** 2 + z ** 2)))
        length = stage.t_switch - stage.t_start

        record = StageRecord(
            stage=stage.index,
            rho=stage.rho,
            norm_start=norm_start,
            norm_switch=norm_switch,
            norm_end=norm_end,
            annihilation=float(np.sqrt(result.projected_residual)),
            control_energy=result.control_energy,
            gramian_condition=result.gramian_condition,
            alpha_k=_ratio(result.control_energy, norm_start ** 2),
            beta_k=_ratio(norm_switch ** 2, norm_start ** 2),
            theta_measured=_ratio(norm_end ** 2, norm_switch ** 2),
            theta_theory=float(thetas[stage.index - 1]),
            log_cost_predictor=log_control_cost_predictor(
                system.lap_basis.values[stage.rho - 1], system.deg_basis.values[stage.rho - 1],
                sigma, length),
        )
        bookkeeping.stages.append(record)
        logger.info(f"Stage {stage.index}: rho={stage.rho}, annihilation={record.annihilation:.3e}, "
                    f"energy={record.control_energy:.3e}, |X(T_k+1)|={norm_end:.3e}")

    control = system.make_control(values, gated=False)
    trajectory = system.forward(y0, z0, control)
    final = trajectory.final
    terminal = (float(np.sqrt(system.weights @ final.y ** 2)), float(np.sqrt(system.weights @ final.z ** 2)))
    logger.info(f"Switching control done: |y(T)|={terminal[0]:.3e}, |z(T)|={terminal[1]:.3e}")
    return SwitchingControlResult(control=control, trajectory=trajectory, terminal_norms=terminal,
                                  per_stage=bookkeeping, schedule=schedule, initial_norm=initial_norm)


def _ratio(num: float, den: float) -> float:
    return 0.0 if den <= 0 else float(num / den)


def bound_tracking(result: SwitchingControlResult) -> BoundReport:
    records = result.per_stage.stages
    factors = np.array([_ratio(r.norm_end ** 2, r.norm_start ** 2) for r in records])
    energies = np.array([r.control_energy for r in records])
    total = float(energies.sum())
    initial_sq = result.initial_norm ** 2
    L_measured = _ratio(total, initial_sq)

    later = factors[1:]
    eventually = bool(np.all(later < 1.0)) if later.size else bool(np.all(factors < 1.0))
    decreasing = bool(np.all(np.diff(factors) <= 0))

    crossover = None
    for i in range(len(factors)):
        if np.all(factors[i:] < 1.0):
            crossover = i + 1
            break
    return BoundReport(contraction_factors=factors, stage_energies=energies, total_energy=total,
                       L_measured=L_measured, eventually_contracting=eventually, decreasing=decreasing,
                       crossover_stage=crossover)


def theoretical_thetas(system: CoupledSystem, schedule: Schedule) -> np.ndarray:
    """theta_k = exp(-(2 min(l, lbar)_{rho_{k+1}} - tau)(T_{k+1} - T~_k))"""
    out = []
    for stage in schedule.stages:
        rho = min(schedule.rho_for(stage.index + 1), system.lap_basis.size, system.deg_basis.size)
        rate = 2.0 * min(system.lap_basis.values[rho - 1], system.deg_basis.values[rho - 1]) - system.tau
        out.append(np.exp(-rate * (stage.t_end - stage.t_switch)))
    return np.array(out)
