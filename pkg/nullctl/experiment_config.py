"""
Experiment configuration models (one per CLI command)

Configs are flat JSON objects; unknown keys are rejected and every domain
invariant is checked while parsing.
"""

import json
from typing import Any, Dict, List, Literal, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from . import config
from .dynamics import CouplingCoefficients, CoupledSystem, PiecewiseConstant, SwitchMode, SwitchingSetup
from .errors import ValidationError
from .intervals import IntervalSet, fat_cantor
from .spectral_core import OperatorKind, OperatorSpec

IntervalList = List[Tuple[float, float]]


class PiecewiseSpec(BaseModel):
    model_config = ConfigDict(extra='forbid')

    breakpoints: List[float]
    values: List[float]


Coefficient = Union[float, PiecewiseSpec]


class BaseConfig(BaseModel):
    model_config = ConfigDict(extra='forbid')

    seed: int = 0


class OperatorConfig(BaseConfig):
    kind: OperatorKind = OperatorKind.LAPLACIAN
    n: int = Field(1000, ge=4)
    alpha: float = 0.5
    grading: Optional[float] = Field(None, ge=1.0)

    @model_validator(mode='after')
    def _check_operator(self):
        if self.kind is OperatorKind.DEGENERATE:
            OperatorSpec.degenerate(self.alpha)
        return self

    @property
    def effective_grading(self) -> float:
        if self.grading is not None:
            return self.grading
        if self.kind is OperatorKind.LAPLACIAN:
            return config.DEFAULT_GRADING_LAPLACIAN
        return config.DEFAULT_GRADING_DEGENERATE


class SpectrumConfig(OperatorConfig):
    k: int = Field(100, ge=1)
    fit_k_min: int = Field(10, ge=1)
    fit_k_max: Optional[int] = None
    bessel_oracle: bool = True

    @model_validator(mode='after')
    def _check_k(self):
        if self.k > self.n:
            raise ValueError(f"k={self.k} exceeds n={self.n}")
        return self


class SpectralConstantConfig(OperatorConfig):
    n: int = Field(2000, ge=4)
    region: IntervalList = [(0.2, 0.3)]
    k_min: int = Field(2, ge=1)
    k_max: int = Field(20, ge=1)
    gamma: float = Field(config.DEFAULT_GAMMA, gt=0.0, lt=2.0)

    @model_validator(mode='after')
    def _check_range(self):
        if self.k_max < self.k_min or self.k_max > self.n:
            raise ValueError(f"Need k_min <= k_max <= n, got {self.k_min}..{self.k_max}")
        region = IntervalSet(self.region)
        if region.measure <= 0 or not region.within(0.0, 1.0):
            raise ValueError("region must be a nonempty union of subintervals of (0, 1)")
        return self


class SystemConfig(BaseConfig):
    n: int = Field(32, ge=4)
    alpha: float = 0.5
    grading: float = Field(config.DEFAULT_GRADING_COUPLED, ge=1.0)
    T: float = Field(1.0, gt=0.0)
    dt: Optional[float] = Field(None, gt=0.0)
    mode: SwitchMode = SwitchMode.ALTERNATING
    gamma: float = Field(config.DEFAULT_GAMMA, gt=0.0, lt=2.0)
    a: Coefficient = 0.0
    b: Coefficient = 0.0
    c: Coefficient = 0.5
    d: Coefficient = 0.0
    G1: IntervalList = [(0.1, 0.4)]
    G2: IntervalList = [(0.6, 0.9)]
    E: IntervalList = [(0.0, 0.5)]
    F: IntervalList = [(0.5, 1.0)]

    @model_validator(mode='after')
    def _check_system(self):
        OperatorSpec.degenerate(self.alpha)
        self.build_setup()
        coeffs = self.build_coefficients()
        if not coeffs.covers(self.T):
            raise ValueError("Coefficient breakpoints must span [0, T]")
        return self

    def _coefficient(self, spec: Coefficient) -> PiecewiseConstant:
        if isinstance(spec, PiecewiseSpec):
            return PiecewiseConstant.from_pieces(spec.breakpoints, spec.values)
        return PiecewiseConstant.constant(spec, self.T)

    def build_coefficients(self) -> CouplingCoefficients:
        return CouplingCoefficients(*(self._coefficient(spec) for spec in (self.a, self.b, self.c, self.d)))

    def build_setup(self, E: Optional[IntervalSet] = None) -> SwitchingSetup:
        """Setup from the configured sets; a replacement E takes its complement as F when alternating"""
        F = IntervalSet(self.F)
        if E is None:
            E = IntervalSet(self.E)
        elif self.mode is SwitchMode.ALTERNATING:
            F = E.complement(0.0, self.T)
        return SwitchingSetup(T=self.T, G1=IntervalSet(self.G1), G2=IntervalSet(self.G2), E=E, F=F,
                              mode=self.mode)

    def build_system(self, time_multiple: int = 1, E: Optional[IntervalSet] = None) -> CoupledSystem:
        return CoupledSystem.build(self.n, self.alpha, self.build_setup(E), self.build_coefficients(),
                                   grading=self.grading, dt=self.dt, time_multiple=time_multiple)


class InitialDataConfig(BaseModel):
    """Initial data as eigen-coefficients, or random when random_initial is set"""
    y0_modes: List[float] = [1.0]
    z0_modes: List[float] = [1.0]
    random_initial: bool = False
    random_modes: int = Field(8, ge=1)

    def initial_data(self, system: CoupledSystem, rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
        if self.random_initial:
            k = min(self.random_modes, system.n)
            return (system.lap_basis.vectors[:, :k] @ rng.standard_normal(k),
                    system.deg_basis.vectors[:, :k] @ rng.standard_normal(k))
        return (_combine(system.lap_basis.vectors, self.y0_modes),
                _combine(system.deg_basis.vectors, self.z0_modes))


def _combine(vectors: np.ndarray, coefficients: Sequence[float]) -> np.ndarray:
    if len(coefficients) > vectors.shape[1]:
        raise ValidationError(f"{len(coefficients)} mode coefficients exceed the basis size")
    if not coefficients:
        return np.zeros(vectors.shape[0])
    return vectors[:, :len(coefficients)] @ np.asarray(coefficients, dtype=float)


class HumConfig(SystemConfig, InitialDataConfig):
    k: int = Field(2, ge=1)
    window: Optional[Tuple[float, float]] = None
    regularization: Optional[float] = Field(None, ge=0.0)

    @model_validator(mode='after')
    def _check_window(self):
        if self.window is not None and not 0.0 <= self.window[0] < self.window[1] <= self.T:
            raise ValueError(f"window must satisfy 0 <= start < end <= T, got {self.window}")
        if self.k > self.n // 2:
            raise ValueError(f"k={self.k} exceeds n/2={self.n // 2}")
        return self


class LrConfig(SystemConfig, InitialDataConfig):
    n: int = Field(64, ge=4)
    G1: IntervalList = [(0.0, 0.5)]
    G2: IntervalList = [(0.5, 1.0)]
    E: IntervalList = [(i / 64.0, (i + 1) / 64.0) for i in range(0, 64, 2)]
    F: IntervalList = [(i / 64.0, (i + 1) / 64.0) for i in range(1, 64, 2)]
    C0: float = config.DEFAULT_C0
    k_max: int = Field(config.DEFAULT_K_MAX, ge=1)
    rho_cap: int = Field(config.DEFAULT_RHO_CAP, ge=1)

    @model_validator(mode='after')
    def _check_schedule(self):
        if not self.C0 > config.MIN_C0:
            raise ValueError(f"C0 must exceed {config.MIN_C0:g}, got {self.C0}")
        if self.rho_cap > self.n // 4:
            raise ValueError(f"rho_cap={self.rho_cap} exceeds n/4={self.n // 4}")
        return self


class ObservabilityConfig(SystemConfig):
    mode: SwitchMode = SwitchMode.SHARED_TIME_SET
    E: IntervalList = [(0.0, 1.0)]
    F: IntervalList = []
    k_modes: int = Field(3, ge=1)
    families: List[Literal['p', 'w']] = ['p', 'w']
    norms: List[Literal['L2Time', 'L1Time']] = ['L2Time', 'L1Time']
    cantor_levels: List[int] = [0, 1, 2, 3]
    control_samples: int = Field(4, ge=1)
    ell: float = 0.9
    ell1: float = 0.5
    q: float = Field(0.5, gt=0.0, lt=1.0)
    n_terms: int = Field(8, ge=1)
    interpolation_times: List[float] = [0.1, 0.3, 0.5, 0.7, 0.8, 0.9]
    interpolation_samples: int = Field(8, ge=1)

    @model_validator(mode='after')
    def _check_observability(self):
        if not 0.0 < self.ell1 < self.ell <= self.T:
            raise ValueError(f"Need 0 < ell1 < ell <= T, got ell1={self.ell1}, ell={self.ell}")
        if any(level < 0 for level in self.cantor_levels):
            raise ValueError("cantor_levels must be non-negative")
        for level in self.cantor_levels:
            self.build_setup(fat_cantor(self.T, level))
        return self


class NegativeConfig(SystemConfig, InitialDataConfig):
    case: Literal[1, 2] = 1
    c: Coefficient = 0.0
    E: IntervalList = [(0.0, 1.0)]
    F: IntervalList = []
    runs: int = Field(config.NEGATIVE_DEMO_RUNS, ge=1)


class ScheduleConfig(BaseConfig):
    T: float = Field(1.0, gt=0.0)
    C0: float = config.DEFAULT_C0
    k_max: int = Field(config.DEFAULT_K_MAX, ge=1)
    rho_cap: Optional[int] = Field(None, ge=1)

    @model_validator(mode='after')
    def _check_c0(self):
        if not self.C0 > config.MIN_C0:
            raise ValueError(f"C0 must exceed {config.MIN_C0:g}, got {self.C0}")
        return self


COMMAND_MODELS = {
    'spectrum': SpectrumConfig,
    'spectral-constant': SpectralConstantConfig,
    'hum': HumConfig,
    'lr': LrConfig,
    'observability': ObservabilityConfig,
    'negative': NegativeConfig,
    'schedule': ScheduleConfig,
}


def parse_override(item: str) -> Tuple[str, Any]:
    """'key=value' with the value read as JSON when possible"""
    if '=' not in item:
        raise ValidationError(f"Override {item!r} is not of the form key=value")
    key, raw = item.split('=', 1)
    key = key.strip()
    if not key:
        raise ValidationError(f"Override {item!r} has an empty key")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key, value


def load_config(command: str, path: Optional[str] = None, overrides: Sequence[str] = (),
                seed: Optional[int] = None) -> BaseConfig:
    """Read a JSON config, apply key=value overrides and validate"""
    if command not in COMMAND_MODELS:
        raise ValidationError(f"Unknown command {command!r}")
    data: Dict[str, Any] = {}
    if path:
        with open(path) as handle:
            try:
                data = json.load(handle)
            except json.JSONDecodeError as exc:
                raise ValidationError(f"Config {path} is not valid JSON: {exc}") from exc
        if not isinstance(data, dict):
            raise ValidationError(f"Config {path} must hold a JSON object")
    for item in overrides:
        key, value = parse_override(item)
        data[key] = value
    if seed is not None:
        data['seed'] = seed
    return COMMAND_MODELS[command].model_validate(data)
