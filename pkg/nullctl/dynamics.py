"""
Forward and adjoint time stepping of the coupled system

    y_t = A y    + a y + b z + chi_E chi_G1 u
    z_t = Abar z + c y + d z + chi_F chi_G2 u        (chi_E instead of chi_F
                                                      in the shared-set mode)

State X = [y; z]; adjoint state Phi = [w; p] with w paired to y and p to z.
One Crank-Nicolson step reads

    P_m X^{m+1} = Q_m X^m + dt Wb B_m u_m,
    P_m = Wb + dt/2 (K - Wb C_m),   Q_m = Wb - dt/2 (K - Wb C_m)

and the adjoint step solves P_m^T Psi = Wb Phi^{m+1}, Phi^m = 2 Psi - Phi^{m+1}.
With that pairing the identity

    <X(T), Phi(T)> - <X(0), Phi(0)> = sum_m dt <u_m, o_m>

holds to rounding, where o_m is the gated adjoint observation at step m.
Coefficients and gates are sampled at step midpoints.
"""

import copy
import logging
import math
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import splu

from . import config
from .errors import ConvergenceError, NumericalBlowupError, ValidationError
from .intervals import IntervalSet
from .spectral_core import (EigenBasis, Grid, OperatorSpec, StiffnessMatrix, assemble_operator,
                            eigendecompose)

logger = logging.getLogger(__name__)

Window = Tuple[float, float]


@dataclass(frozen=True, eq=False)
class PiecewiseConstant:
    """Right-continuous piecewise-constant function on [breakpoints[0], breakpoints[-1]]"""
    breakpoints: np.ndarray
    values: np.ndarray

    @classmethod
    def constant(cls, value: float, T: float) -> 'PiecewiseConstant':
        return cls(np.array([0.0, float(T)]), np.array([float(value)]))

    @classmethod
    def from_pieces(cls, breakpoints: Sequence[float], values: Sequence[float]) -> 'PiecewiseConstant':
        return cls(np.asarray(breakpoints, dtype=float), np.asarray(values, dtype=float))

    def __post_init__(self):
        bp = np.asarray(self.breakpoints, dtype=float)
        vals = np.asarray(self.values, dtype=float)
        object.__setattr__(self, 'breakpoints', bp)
        object.__setattr__(self, 'values', vals)
        if bp.ndim != 1 or vals.ndim != 1 or len(bp) != len(vals) + 1 or len(vals) == 0:
            raise ValidationError("Piecewise function needs m+1 breakpoints for m values")
        if np.any(np.diff(bp) <= 0):
            raise ValidationError("Breakpoints must be strictly increasing")
        if not np.all(np.isfinite(vals)):
            raise ValidationError("Piecewise values must be finite")

    def __call__(self, t):
        idx = np.searchsorted(self.breakpoints, t, side='right') - 1
        idx = np.clip(idx, 0, len(self.values) - 1)
        return self.values[idx]

    @property
    def sup_norm(self) -> float:
        return float(np.max(np.abs(self.values)))

    @property
    def start(self) -> float:
        return float(self.breakpoints[0])

    @property
    def end(self) -> float:
        return float(self.breakpoints[-1])

    def values_on(self, start: float, end: float) -> np.ndarray:
        """Values of the pieces overlapping (start, end) with positive length"""
        lo = np.maximum(self.breakpoints[:-1], start)
        hi = np.minimum(self.breakpoints[1:], end)
        return self.values[hi > lo]


@dataclass(frozen=True, eq=False)
class CouplingCoefficients:
    a: PiecewiseConstant
    b: PiecewiseConstant
    c: PiecewiseConstant
    d: PiecewiseConstant

    @classmethod
    def constant(cls, a: float, b: float, c: float, d: float, T: float) -> 'CouplingCoefficients':
        return cls(*(PiecewiseConstant.constant(v, T) for v in (a, b, c, d)))

    @property
    def tau(self) -> float:
        return (2.0 * max(self.a.sup_norm, self.d.sup_norm)
                + self.b.sup_norm + self.c.sup_norm + 1.0)

    def at(self, t) -> np.ndarray:
        """Coefficients (a, b, c, d) at time(s) t, stacked on the last axis"""
        return np.stack([self.a(t), self.b(t), self.c(t), self.d(t)], axis=-1)

    def covers(self, T: float, tol: float = 1e-12) -> bool:
        return all(f.start <= tol and f.end >= T - tol for f in (self.a, self.b, self.c, self.d))

    @property
    def interior_breakpoints(self) -> List[float]:
        points = set()
        for f in (self.a, self.b, self.c, self.d):
            points.update(float(t) for t in f.breakpoints[1:-1])
        return sorted(points)


class SwitchMode(str, Enum):
    SHARED_TIME_SET = 'shared'
    ALTERNATING = 'alternating'


@dataclass(frozen=True, eq=False)
class SwitchingSetup:
    """Space regions G1, G2 and time gates E, F on the horizon (0, T)"""
    T: float
    G1: IntervalSet
    G2: IntervalSet
    E: IntervalSet
    F: IntervalSet
    mode: SwitchMode = SwitchMode.ALTERNATING
    check: bool = True

    def __post_init__(self):
        object.__setattr__(self, 'mode', SwitchMode(self.mode))
        if self.check:
            self.validate()

    def validate(self, tol: float = 1e-12):
        if not self.T > 0:
            raise ValidationError(f"Horizon T must be positive, got {self.T}")
        for name in ('G1', 'G2'):
            if not getattr(self, name).within(0.0, 1.0):
                raise ValidationError(f"{name} must lie inside (0, 1)")
        for name in ('E', 'F'):
            if not getattr(self, name).within(0.0, self.T):
                raise ValidationError(f"{name} must lie inside (0, T)")
        if self.G1.intersect(self.G2).measure > tol:
            raise ValidationError("G1 and G2 must be disjoint")
        if self.mode is SwitchMode.ALTERNATING:
            if self.E.intersect(self.F).measure > tol:
                raise ValidationError("E and F must be disjoint")
            if self.E.union(self.F).measure < self.T - 1e-9 * max(1.0, self.T):
                raise ValidationError("E and F must cover (0, T)")
        elif self.E.measure <= 0:
            raise ValidationError("The shared time set E must have positive measure")

    def gate_y(self, t) -> np.ndarray:
        return self.E.indicator(t)

    def gate_z(self, t) -> np.ndarray:
        if self.mode is SwitchMode.SHARED_TIME_SET:
            return self.E.indicator(t)
        return self.F.indicator(t)

    @property
    def time_breakpoints(self) -> List[float]:
        points = set(self.E.endpoints)
        if self.mode is SwitchMode.ALTERNATING:
            points.update(self.F.endpoints)
        return sorted(p for p in points if 0.0 < p < self.T)

    @property
    def gate_intervals(self) -> List[float]:
        lengths = list(self.E.lengths)
        if self.mode is SwitchMode.ALTERNATING:
            lengths += list(self.F.lengths)
        return lengths


@dataclass
class CoupledState:
    y: np.ndarray
    z: np.ndarray
    t: float


@dataclass
class Trajectory:
    times: np.ndarray
    y: np.ndarray
    z: np.ndarray

    def state(self, i: int) -> CoupledState:
        return CoupledState(self.y[i], self.z[i], float(self.times[i]))

    @property
    def final(self) -> CoupledState:
        return self.state(-1)

    def energy(self, weights: np.ndarray) -> np.ndarray:
        """||y(t)||^2 + ||z(t)||^2 at every saved time"""
        return (self.y ** 2 + self.z ** 2) @ weights


@dataclass
class AdjointTrajectory:
    times: np.ndarray
    p: np.ndarray
    w: np.ndarray
    observations: np.ndarray

    @property
    def initial(self) -> Tuple[np.ndarray, np.ndarray]:
        return self.p[0], self.w[0]

    def energy(self, weights: np.ndarray) -> np.ndarray:
        return (self.p ** 2 + self.w ** 2) @ weights


@dataclass
class ControlSignal:
    """Piecewise-constant control u_m on the steps of one window"""
    t_start: float
    dt: float
    values: np.ndarray
    gate_y: np.ndarray
    gate_z: np.ndarray
    mask_g1: np.ndarray
    mask_g2: np.ndarray

    @property
    def n_steps(self) -> int:
        return self.values.shape[0]

    @property
    def times(self) -> np.ndarray:
        return self.t_start + (np.arange(self.n_steps) + 0.5) * self.dt

    @property
    def active_g1(self) -> np.ndarray:
        return np.outer(self.gate_y, self.mask_g1) > 0

    @property
    def active_g2(self) -> np.ndarray:
        return np.outer(self.gate_z, self.mask_g2) > 0

    @property
    def support(self) -> np.ndarray:
        return self.active_g1 | self.active_g2

    def energy(self, weights: np.ndarray) -> float:
        return float(self.dt * np.sum((self.values ** 2) @ weights))


@dataclass
class CertificateReport:
    times: np.ndarray
    lhs: np.ndarray
    rhs: np.ndarray
    margin: float
    satisfied: bool


class Projection(str, Enum):
    LOW = 'low'
    HIGH = 'high'


@dataclass
class _Factor:
    lu: object
    p_mat: sparse.csc_matrix
    q_mat: sparse.csc_matrix
    checked_forward: bool = False
    checked_adjoint: bool = False


def default_time_step(setup: SwitchingSetup, coeffs: Optional[CouplingCoefficients] = None,
                      multiple_of: int = 1) -> Tuple[float, int]:
    """dt = min(1e-3 T, shortest gate interval / 50), refined so breakpoints sit on the grid"""
    T = setup.T
    dt0 = config.DT_FRACTION_OF_HORIZON * T
    lengths = setup.gate_intervals
    if lengths:
        dt0 = min(dt0, min(lengths) / config.DT_STEPS_PER_INTERVAL)

    multiple_of = max(int(multiple_of), 1)
    n0 = int(math.ceil(T / dt0 - 1e-9))
    n0 = multiple_of * int(math.ceil(n0 / multiple_of))

    breakpoints = list(setup.time_breakpoints)
    if coeffs is not None:
        breakpoints += [t for t in coeffs.interior_breakpoints if 0.0 < t < T]

    n_steps = n0
    while n_steps <= 4 * n0:
        scaled = np.asarray(breakpoints) * n_steps / T
        if np.all(np.abs(scaled - np.round(scaled)) <= 1e-8 * np.maximum(1.0, scaled)):
            return T / n_steps, n_steps
        n_steps += multiple_of

    logger.warning(f"No step count in [{n0}, {4 * n0}] puts every breakpoint on the grid; "
                   f"gates are sampled at step midpoints with {n0} steps")
    return T / n0, n0


class CoupledSystem:
    """Discretized coupled system: operators, gates, coefficients and time grid"""

    def __init__(self, laplacian: StiffnessMatrix, degenerate: StiffnessMatrix,
                 setup: SwitchingSetup, coeffs: CouplingCoefficients,
                 dt: Optional[float] = None, time_multiple: int = 1,
                 bases: Optional[Tuple[EigenBasis, EigenBasis]] = None):
        if laplacian.n != degenerate.n or not np.allclose(laplacian.weights, degenerate.weights,
                                                           rtol=0, atol=1e-15):
            raise ValidationError("Both operators must live on the same grid")
        if not coeffs.covers(setup.T):
            raise ValidationError("Coupling coefficients must be defined on all of [0, T]")

        self.laplacian = laplacian
        self.degenerate = degenerate
        self.grid: Grid = laplacian.grid
        self.n = laplacian.n
        self.setup = setup
        self.coeffs = coeffs
        self.weights = self.grid.weights
        self.wb = np.concatenate([self.weights, self.weights])
        self.mask_g1 = self.grid.cells_in(setup.G1).astype(float)
        self.mask_g2 = self.grid.cells_in(setup.G2).astype(float)
        self.k_block = sparse.block_diag([laplacian.to_sparse(), degenerate.to_sparse()], format='csc')
        self._w_diag = sparse.diags(self.weights, format='csc')

        if bases is None:
            bases = (eigendecompose(laplacian), eigendecompose(degenerate))
        self.lap_basis, self.deg_basis = bases

        if dt is None:
            dt, n_steps = default_time_step(setup, coeffs, time_multiple)
        else:
            n_steps = int(round(setup.T / dt))
            if n_steps < 1 or abs(n_steps * dt - setup.T) > 1e-9 * setup.T:
                raise ValidationError(f"dt={dt} does not divide the horizon T={setup.T}")
            if n_steps % max(int(time_multiple), 1):
                raise ValidationError(f"Step count {n_steps} is not a multiple of {time_multiple}")
        self._set_time_grid(setup.T / n_steps, n_steps)
        logger.debug(f"Coupled system: n={self.n}, dt={self.dt:.3e}, steps={self.n_steps}, "
                     f"tau={self.tau:.3f}")

    @classmethod
    def build(cls, n: int, alpha: float, setup: SwitchingSetup, coeffs: CouplingCoefficients,
              grading: float = config.DEFAULT_GRADING_COUPLED, dt: Optional[float] = None,
              time_multiple: int = 1) -> 'CoupledSystem':
        grid = Grid.graded(n, grading)
        laplacian = assemble_operator(grid, OperatorSpec.laplacian())
        degenerate = assemble_operator(grid, OperatorSpec.degenerate(alpha))
        return cls(laplacian, degenerate, setup, coeffs, dt=dt, time_multiple=time_multiple)

    def _set_time_grid(self, dt: float, n_steps: int):
        self.dt = float(dt)
        self.n_steps = int(n_steps)
        mids = (np.arange(self.n_steps) + 0.5) * self.dt
        self._gate_y = self.setup.gate_y(mids)
        self._gate_z = self.setup.gate_z(mids)
        self._coefs = self.coeffs.at(mids)

    def with_time_step(self, dt: float) -> 'CoupledSystem':
        """Same system on another time grid (bases are shared)"""
        n_steps = int(round(self.setup.T / dt))
        if n_steps < 1 or abs(n_steps * dt - self.setup.T) > 1e-9 * self.setup.T:
            raise ValidationError(f"dt={dt} does not divide the horizon T={self.setup.T}")
        other = copy.copy(self)
        other._set_time_grid(self.setup.T / n_steps, n_steps)
        return other

    @property
    def T(self) -> float:
        return self.setup.T

    @property
    def tau(self) -> float:
        return self.coeffs.tau

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.n_steps + 1) * self.dt

    def step_of(self, t: float) -> int:
        m = t / self.dt
        if abs(m - round(m)) > 1e-8 * max(1.0, abs(m)):
            raise ValidationError(f"Time {t} is not on the grid (dt={self.dt})")
        return int(round(m))

    def window_steps(self, window: Optional[Window] = None) -> Tuple[int, int]:
        if window is None:
            return 0, self.n_steps
        m0, m1 = self.step_of(window[0]), self.step_of(window[1])
        if not 0 <= m0 < m1 <= self.n_steps:
            raise ValidationError(f"Window {window} is empty or outside [0, {self.T}]")
        return m0, m1

    def step_gates(self, m: int) -> Tuple[np.ndarray, np.ndarray]:
        """Control footprints g1, g2 (gate x mask) of global step m"""
        return self._gate_y[m] * self.mask_g1, self._gate_z[m] * self.mask_g2

    def gate_arrays(self, window: Optional[Window] = None) -> Tuple[np.ndarray, np.ndarray]:
        m0, m1 = self.window_steps(window)
        return self._gate_y[m0:m1].copy(), self._gate_z[m0:m1].copy()

    def _factor(self, cache: Dict[tuple, _Factor], m: int) -> _Factor:
        key = tuple(self._coefs[m])
        entry = cache.get(key)
        if entry is None:
            p_mat, q_mat = self._step_matrices(self._coefs[m])
            entry = _Factor(lu=splu(p_mat), p_mat=p_mat, q_mat=q_mat)
            cache[key] = entry
        return entry

    def _step_matrices(self, coef: np.ndarray) -> Tuple[sparse.csc_matrix, sparse.csc_matrix]:
        a, b, c, d = (float(v) for v in coef)
        wd = self._w_diag
        wc = sparse.bmat([[a * wd, b * wd], [c * wd, d * wd]], format='csc')
        m_mat = self.k_block - wc
        wb = sparse.diags(self.wb, format='csc')
        half = 0.5 * self.dt
        return (wb + half * m_mat).tocsc(), (wb - half * m_mat).tocsc()

    def step_operators(self, m: int) -> Tuple[sparse.csc_matrix, sparse.csc_matrix, np.ndarray, np.ndarray]:
        """(P_m, Q_m, g1, g2) of global step m"""
        p_mat, q_mat = self._step_matrices(self._coefs[m])
        g1, g2 = self.step_gates(m)
        return p_mat, q_mat, g1, g2

    def _check_solve(self, mat, x: np.ndarray, rhs: np.ndarray, m: int, direction: str):
        scale = max(float(np.linalg.norm(rhs)), np.finfo(float).tiny)
        residual = float(np.linalg.norm(mat @ x - rhs)) / scale
        logger.debug(f"{direction} step {m}: relative solve residual {residual:.2e}")
        if residual > config.STEP_RESIDUAL_TOL:
            raise ConvergenceError(
                f"{direction} step solve did not reach tolerance",
                {'step': m, 'residual': residual, 'tolerance': config.STEP_RESIDUAL_TOL},
            )

    def _check_finite(self, x: np.ndarray, m: int, direction: str):
        if not np.all(np.isfinite(x)):
            raise NumericalBlowupError(f"Non-finite {direction} state at step {m}",
                                       {'step': m, 'time': m * self.dt})

    # -- controls ---------------------------------------------------------------

    def make_control(self, values: np.ndarray, window: Optional[Window] = None,
                     gated: bool = True) -> ControlSignal:
        """Wrap per-step values; gated=True zeroes them outside the allowed support"""
        m0, m1 = self.window_steps(window)
        values = np.array(values, dtype=float)
        if values.shape != (m1 - m0, self.n):
            raise ValidationError(f"Control values have shape {values.shape}, expected {(m1 - m0, self.n)}")
        gate_y, gate_z = self._gate_y[m0:m1].copy(), self._gate_z[m0:m1].copy()
        if gated:
            allowed = (np.outer(gate_y, self.mask_g1) + np.outer(gate_z, self.mask_g2)) > 0
            values = np.where(allowed, values, 0.0)
        return ControlSignal(t_start=m0 * self.dt, dt=self.dt, values=values, gate_y=gate_y,
                             gate_z=gate_z, mask_g1=self.mask_g1.copy(), mask_g2=self.mask_g2.copy())

    def zero_control(self, window: Optional[Window] = None) -> ControlSignal:
        m0, m1 = self.window_steps(window)
        return self.make_control(np.zeros((m1 - m0, self.n)), window)

    def _check_control(self, control: ControlSignal, m0: int, m1: int):
        if abs(control.dt - self.dt) > 1e-12 * self.dt:
            raise ValidationError(f"Control step {control.dt} differs from system step {self.dt}")
        if abs(control.t_start - m0 * self.dt) > 1e-9 * max(1.0, self.T) or control.n_steps != m1 - m0:
            raise ValidationError("Control does not match the requested window")

    # -- solvers ----------------------------------------------------------------

    def forward(self, y0: np.ndarray, z0: np.ndarray, control: Optional[ControlSignal] = None,
                window: Optional[Window] = None) -> Trajectory:
        m0, m1 = self.window_steps(window)
        x = np.concatenate([self._as_vector(y0, 'y0'), self._as_vector(z0, 'z0')])
        if control is not None:
            self._check_control(control, m0, m1)

        n, cache = self.n, {}
        states = np.empty((m1 - m0 + 1, 2 * n))
        states[0] = x
        for j, m in enumerate(range(m0, m1)):
            entry = self._factor(cache, m)
            rhs = entry.q_mat @ x
            if control is not None:
                g1, g2 = self.step_gates(m)
                u = control.values[j]
                rhs[:n] += self.dt * self.weights * g1 * u
                rhs[n:] += self.dt * self.weights * g2 * u
            x = entry.lu.solve(rhs)
            if not entry.checked_forward:
                self._check_solve(entry.p_mat, x, rhs, m, 'forward')
                entry.checked_forward = True
            self._check_finite(x, m, 'forward')
            states[j + 1] = x

        times = np.arange(m0, m1 + 1) * self.dt
        return Trajectory(times=times, y=states[:, :n].copy(), z=states[:, n:].copy())

    def adjoint_sweep(self, terminal: np.ndarray, window: Optional[Window] = None,
                      on_step: Optional[Callable[[int, np.ndarray], None]] = None,
                      keep_history: bool = False) -> Tuple[np.ndarray, Optional[np.ndarray]]:
        """Backward sweep for a block of terminal data.

        terminal has shape (2n,) or (2n, r) with rows [w; p]. on_step(j, obs)
        receives the gated (n, r) observation of window step j. Returns the
        initial adjoint data and, if requested, the (steps+1, 2n, r) history.
        """
        m0, m1 = self.window_steps(window)
        n = self.n
        phi = np.array(terminal, dtype=float).reshape(2 * n, -1)
        if not np.all(np.isfinite(phi)):
            raise ValidationError("Terminal data must be finite")

        history = None
        if keep_history:
            history = np.empty((m1 - m0 + 1, 2 * n, phi.shape[1]))
            history[-1] = phi
        cache: Dict[tuple, _Factor] = {}
        for j in reversed(range(m1 - m0)):
            m = m0 + j
            entry = self._factor(cache, m)
            rhs = self.wb[:, None] * phi
            psi = entry.lu.solve(rhs, trans='T')
            if not entry.checked_adjoint:
                self._check_solve(entry.p_mat.T, psi, rhs, m, 'adjoint')
                entry.checked_adjoint = True
            phi = 2.0 * psi - phi
            self._check_finite(phi, m, 'adjoint')
            if on_step is not None:
                g1, g2 = self.step_gates(m)
                on_step(j, g1[:, None] * psi[:n] + g2[:, None] * psi[n:])
            if keep_history:
                history[j] = phi
        return phi, history

    def adjoint(self, pT: np.ndarray, wT: np.ndarray, window: Optional[Window] = None) -> AdjointTrajectory:
        m0, m1 = self.window_steps(window)
        n = self.n
        terminal = stack_adjoint(self._as_vector(pT, 'pT'), self._as_vector(wT, 'wT'))
        observations = np.empty((m1 - m0, n))

        def record(j, obs):
            observations[j] = obs[:, 0]

        _, history = self.adjoint_sweep(terminal, window, on_step=record, keep_history=True)
        history = history[:, :, 0]
        times = np.arange(m0, m1 + 1) * self.dt
        return AdjointTrajectory(times=times, p=history[:, n:].copy(), w=history[:, :n].copy(),
                                 observations=observations)

    def _as_vector(self, v, name: str) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        if v.shape != (self.n,):
            raise ValidationError(f"{name} has shape {v.shape}, expected ({self.n},)")
        if not np.all(np.isfinite(v)):
            raise ValidationError(f"{name} must be finite")
        return v

    # -- pairings ---------------------------------------------------------------

    def pairing(self, x: np.ndarray, phi: np.ndarray) -> float:
        """<y, w> + <z, p> for stacked [y; z] and [w; p]"""
        return float(np.sum(self.wb * x * phi))

    def projected_norm_squared(self, y: np.ndarray, z: np.ndarray, k: int) -> float:
        """||Pi_k y||^2 + ||Pibar_k z||^2"""
        cy = self.lap_basis.coefficients(y, k)
        cz = self.deg_basis.coefficients(z, k)
        return float(cy @ cy + cz @ cz)


def stack_adjoint(p: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Adjoint block [w; p] (w pairs with y, p with z)"""
    return np.concatenate([w, p])


def solve_forward(y0: np.ndarray, z0: np.ndarray, system: CoupledSystem,
                  control: Optional[ControlSignal] = None,
                  window: Optional[Window] = None) -> Trajectory:
    return system.forward(y0, z0, control, window)


def solve_adjoint(pT: np.ndarray, wT: np.ndarray, system: CoupledSystem,
                  window: Optional[Window] = None) -> AdjointTrajectory:
    return system.adjoint(pT, wT, window)


def spectral_project(v: np.ndarray, basis: EigenBasis, k: int, part: Projection = Projection.LOW) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if v.shape != basis.weights.shape:
        raise ValidationError(f"Vector of shape {v.shape} does not match the basis grid")
    if not 0 <= k <= basis.size:
        raise ValidationError(f"k={k} exceeds the basis size {basis.size}")
    vecs = basis.vectors[:, :k]
    low = vecs @ (vecs.T @ (basis.weights * v))
    return low if Projection(part) is Projection.LOW else v - low


def _relative_gap(coarse: np.ndarray, fine: np.ndarray, rhs: np.ndarray) -> float:
    positive = rhs > 0
    if not np.any(positive):
        return 0.0
    return float(np.max(np.abs(coarse - fine)[positive] / rhs[positive]))


def decay_certificate(system: CoupledSystem, y0: np.ndarray, z0: np.ndarray, k: int,
                      window: Optional[Window] = None) -> CertificateReport:
    """Unforced high-mode decay ||y||^2+||z||^2 <= e^{-(2 min(l_{k+1}, lbar_{k+1}) - tau) t} E0"""
    if not 0 <= k < min(system.lap_basis.size, system.deg_basis.size):
        raise ValidationError(f"k={k} leaves no high modes on a {system.n}-cell grid")
    scale = max(1.0, float(np.sqrt(system.weights @ (np.asarray(y0) ** 2 + np.asarray(z0) ** 2))))
    low = system.projected_norm_squared(y0, z0, k)
    if np.sqrt(low) > config.PROJECTION_TOL * scale:
        raise ValidationError(f"Initial data has low-mode content {np.sqrt(low):.3e} below mode {k + 1}")

    rate = 2.0 * min(system.lap_basis.values[k], system.deg_basis.values[k]) - system.tau
    coarse = system.forward(y0, z0, window=window)
    fine = system.with_time_step(0.5 * system.dt).forward(y0, z0, window=window)

    lhs = coarse.energy(system.weights)
    fine_lhs = fine.energy(system.weights)[::2]
    elapsed = coarse.times - coarse.times[0]
    rhs = np.exp(-rate * elapsed) * lhs[0]
    margin = config.CERTIFICATE_BASE_MARGIN + 2.0 * _relative_gap(lhs, fine_lhs, rhs)
    satisfied = bool(np.all(lhs <= rhs * (1.0 + margin)))
    logger.info(f"Decay certificate k={k}: satisfied={satisfied}, margin={margin:.2e}")
    return CertificateReport(times=coarse.times, lhs=lhs, rhs=rhs, margin=margin, satisfied=satisfied)


def energy_bound_check(system: CoupledSystem, y0: np.ndarray, z0: np.ndarray,
                       window: Optional[Window] = None) -> CertificateReport:
    """Unforced growth bound ||y||^2+||z||^2 <= e^{tau t} E0"""
    trajectory = system.forward(y0, z0, window=window)
    lhs = trajectory.energy(system.weights)
    elapsed = trajectory.times - trajectory.times[0]
    rhs = np.exp(system.tau * elapsed) * lhs[0]
    margin = config.CERTIFICATE_BASE_MARGIN
    return CertificateReport(times=trajectory.times, lhs=lhs, rhs=rhs, margin=margin,
                             satisfied=bool(np.all(lhs <= rhs * (1.0 + margin))))


def adjoint_decay_check(system: CoupledSystem, pT: np.ndarray, wT: np.ndarray, k: int,
                        window: Optional[Window] = None) -> CertificateReport:
    """High-mode adjoint decay ||E^perp p(t)||^2 + ||E^perp w(t)||^2 <= e^{(-2 min + tau)(T-t)} E_T"""
    if not 1 <= k < min(system.lap_basis.size, system.deg_basis.size):
        raise ValidationError(f"k={k} must leave high modes on a {system.n}-cell grid")
    rate = 2.0 * min(system.deg_basis.values[k - 1], system.lap_basis.values[k - 1]) - system.tau

    def high_energy(sys_: CoupledSystem) -> Tuple[np.ndarray, np.ndarray]:
        traj = sys_.adjoint(pT, wT, window)
        high_p = np.array([spectral_project(v, sys_.deg_basis, k, Projection.HIGH) for v in traj.p])
        high_w = np.array([spectral_project(v, sys_.lap_basis, k, Projection.HIGH) for v in traj.w])
        return traj.times, (high_p ** 2 + high_w ** 2) @ sys_.weights

    times, lhs = high_energy(system)
    _, fine_lhs = high_energy(system.with_time_step(0.5 * system.dt))
    terminal = float(system.weights @ (np.asarray(pT) ** 2 + np.asarray(wT) ** 2))
    rhs = np.exp(-rate * (times[-1] - times)) * terminal
    margin = config.CERTIFICATE_BASE_MARGIN + 2.0 * _relative_gap(lhs, fine_lhs[::2], rhs)
    satisfied = bool(np.all(lhs <= rhs * (1.0 + margin)))
    logger.info(f"Adjoint decay check k={k}: satisfied={satisfied}, margin={margin:.2e}")
    return CertificateReport(times=times, lhs=lhs, rhs=rhs, margin=margin, satisfied=satisfied)
