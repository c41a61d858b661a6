"""
Finite-dimensional HUM for the coupled system

Terminal adjoint data are restricted to the first k modes of each family
(p on the degenerate basis, w on the Laplacian basis). The control is the
observation of the adjoint run from the terminal combination xi solving

    (Lambda + eps I) xi = beta,   beta_I = -<(y0, z0), Phi_I(t_start)>,

which drives Pi_k y(t_end) and Pibar_k z(t_end) to zero.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.linalg import eigh, svd

from . import config
from .dynamics import ControlSignal, CoupledSystem, Trajectory, Window, stack_adjoint
from .errors import UncontrollableModeError, ValidationError
from .spectral_ineq import sigma_exponent

logger = logging.getLogger(__name__)

Mode = Tuple[str, int]
FAMILIES = ('p', 'w')


@dataclass
class HumProblem:
    system: CoupledSystem
    window: Window
    k: int
    y0: np.ndarray
    z0: np.ndarray
    regularization: Optional[float] = None

    def __post_init__(self):
        self.system.window_steps(self.window)
        if not 1 <= self.k <= min(self.system.lap_basis.size, self.system.deg_basis.size):
            raise ValidationError(f"k={self.k} exceeds the available modes")
        if self.regularization is not None and self.regularization < 0:
            raise ValidationError(f"Regularization must be >= 0, got {self.regularization}")
        self.y0 = np.asarray(self.y0, dtype=float)
        self.z0 = np.asarray(self.z0, dtype=float)


@dataclass
class HumGramian:
    matrix: np.ndarray
    modes: List[Mode]
    terminal: np.ndarray
    initial_adjoint: np.ndarray
    factor: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def dimension(self) -> int:
        return self.matrix.shape[0]

    @property
    def trace(self) -> float:
        return float(np.trace(self.matrix))

    def singular_pairs(self) -> Tuple[np.ndarray, np.ndarray]:
        """Descending singular values of the observation factor and the matching right vectors (columns)"""
        if self.factor is None:
            self.factor = triangular_factor(self.matrix)
        _, sigma, vt = svd(self.factor)
        return sigma, vt.T


@dataclass
class PartialControlResult:
    control: ControlSignal
    projected_residual: float
    control_energy: float
    gramian_condition: float
    xi: np.ndarray
    trajectory: Trajectory
    regularization: float
    gramian: Optional[HumGramian] = field(default=None, repr=False)


@dataclass
class ControlObservabilityEstimate:
    estimate: float
    control_bound: float
    ratios: np.ndarray
    control_ratios: np.ndarray


def modal_terminals(system: CoupledSystem, k: int, families: Sequence[str] = FAMILIES) -> Tuple[np.ndarray, List[Mode]]:
    """Stacked [w; p] terminal columns: p-modes first, then w-modes"""
    n = system.n
    columns, modes = [], []
    zero = np.zeros(n)
    if 'p' in families:
        for i in range(k):
            columns.append(stack_adjoint(system.deg_basis.vectors[:, i], zero))
            modes.append(('p', i + 1))
    if 'w' in families:
        for i in range(k):
            columns.append(stack_adjoint(zero, system.lap_basis.vectors[:, i]))
            modes.append(('w', i + 1))
    if not columns:
        raise ValidationError(f"No terminal families selected from {families!r}")
    return np.column_stack(columns), modes


def adjoint_observations(system: CoupledSystem, terminal: np.ndarray,
                         window: Optional[Window] = None) -> Tuple[np.ndarray, np.ndarray]:
    """Initial adjoint data (2n, r) and per-step observations (steps, n, r)"""
    m0, m1 = system.window_steps(window)
    terminal = np.asarray(terminal, dtype=float).reshape(2 * system.n, -1)
    observations = np.empty((m1 - m0, system.n, terminal.shape[1]))

    def record(j, obs):
        observations[j] = obs

    phi0, _ = system.adjoint_sweep(terminal, window, on_step=record)
    return phi0, observations


def stack_factor(factor: np.ndarray, block: np.ndarray) -> np.ndarray:
    """Square triangular R with R^T R = factor^T factor + block^T block"""
    r = factor.shape[1]
    stacked = np.vstack([factor, block])
    if stacked.shape[0] == 0:
        return np.zeros((r, r))
    upper = np.linalg.qr(stacked, mode='r')
    if upper.shape[0] < r:
        upper = np.vstack([upper, np.zeros((r - upper.shape[0], r))])
    return upper


def triangular_factor(matrix: np.ndarray) -> np.ndarray:
    """Square root of a PSD matrix, for Gramians assembled without their observation factor"""
    mu, vecs = eigh(matrix)
    return np.sqrt(np.clip(mu, 0.0, None))[:, None] * vecs.T


def null_directions(sigma: np.ndarray) -> np.ndarray:
    """Mask of singular values at rounding level relative to the largest"""
    top = float(sigma.max()) if sigma.size else 0.0
    if top <= 0:
        return np.ones_like(sigma, dtype=bool)
    return sigma <= config.NULL_SPACE_TOL * top


def _observation_gramian(system: CoupledSystem, terminal: np.ndarray,
                         window: Optional[Window]) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    r = terminal.shape[1]
    gram = np.zeros((r, r))
    weights = system.weights[:, None]
    root = np.sqrt(system.dt * system.weights)[:, None]
    factor = np.zeros((0, r))

    def accumulate(j, obs):
        nonlocal factor
        np.add(gram, system.dt * (obs.T @ (weights * obs)), out=gram)
        factor = stack_factor(factor, root * obs)

    phi0, _ = system.adjoint_sweep(terminal, window, on_step=accumulate)
    return 0.5 * (gram + gram.T), stack_factor(factor, np.zeros((0, r))), phi0


def build_hum_gramian(problem: HumProblem) -> HumGramian:
    system = problem.system
    terminal, modes = modal_terminals(system, problem.k)
    matrix, factor, phi0 = _observation_gramian(system, terminal, problem.window)
    logger.debug(f"HUM Gramian {matrix.shape[0]}x{matrix.shape[0]} on window {problem.window}: "
                 f"trace={np.trace(matrix):.3e}")
    return HumGramian(matrix=matrix, modes=modes, terminal=terminal, initial_adjoint=phi0, factor=factor)


def default_regularization(gramian: HumGramian) -> float:
    return config.HUM_REGULARIZATION_SCALE * max(gramian.trace, 0.0) / gramian.dimension


def gramian_condition(gramian: HumGramian) -> float:
    sigma, _ = gramian.singular_pairs()
    if sigma.size == 0 or sigma[-1] <= 0:
        return float('inf')
    return float((sigma[0] / sigma[-1]) ** 2)


def solve_gramian(gramian: HumGramian, beta: np.ndarray, eps: float) -> np.ndarray:
    """xi = V diag(1/(s^2+eps)) V^T beta from the observation factor's SVD;
    with eps=0 null directions (s at rounding level) must not be needed"""
    sigma, vecs = gramian.singular_pairs()
    mu = sigma ** 2
    coeffs = vecs.T @ beta

    if eps > 0:
        return vecs @ (coeffs / (mu + eps))

    top = float(mu[0]) if mu.size else 0.0
    null = null_directions(sigma)
    beta_scale = max(float(np.linalg.norm(beta)), np.finfo(float).tiny)
    needed = np.abs(coeffs) > 1e-10 * beta_scale
    blocked = null & needed
    if np.any(blocked):
        worst = int(np.flatnonzero(blocked)[np.argmax(np.abs(coeffs[blocked]))])
        mode = gramian.modes[int(np.argmax(np.abs(vecs[:, worst])))]
        raise UncontrollableModeError(
            f"Gramian is singular in a direction the target needs (dominant mode {mode[0]}{mode[1]})",
            {'mode_family': mode[0], 'mode_index': mode[1], 'null_dimension': int(null.sum()),
             'component': float(coeffs[worst]), 'mu_max': top},
        )
    keep = ~null
    return vecs[:, keep] @ (coeffs[keep] / mu[keep])


def _control_from_terminal(system: CoupledSystem, terminal: np.ndarray, window: Window) -> ControlSignal:
    _, observations = adjoint_observations(system, terminal, window)
    return system.make_control(observations[:, :, 0], window, gated=False)


def synthesize_with_gramian(problem: HumProblem, gramian: HumGramian) -> PartialControlResult:
    system = problem.system
    x0 = np.concatenate([problem.y0, problem.z0])
    beta = -(gramian.initial_adjoint.T @ (system.wb * x0))

    eps = default_regularization(gramian) if problem.regularization is None else problem.regularization
    xi = solve_gramian(gramian, beta, eps)
    control = _control_from_terminal(system, gramian.terminal @ xi, problem.window)
    trajectory = system.forward(problem.y0, problem.z0, control, problem.window)
    final = trajectory.final

    residual = system.projected_norm_squared(final.y, final.z, problem.k)
    energy = control.energy(system.weights)
    condition = gramian_condition(gramian)
    logger.info(f"HUM k={problem.k} on {problem.window}: residual={residual:.3e}, "
                f"energy={energy:.3e}, condition={condition:.3e}")
    return PartialControlResult(control=control, projected_residual=residual, control_energy=energy,
                                gramian_condition=condition, xi=xi, trajectory=trajectory,
                                regularization=eps, gramian=gramian)


def synthesize_partial_control(problem: HumProblem) -> PartialControlResult:
    return synthesize_with_gramian(problem, build_hum_gramian(problem))


def duality_residual(system: CoupledSystem, control: ControlSignal, terminal: Tuple[np.ndarray, np.ndarray],
                     initial: Tuple[np.ndarray, np.ndarray], window: Optional[Window] = None) -> float:
    """|<X(T), Phi_T> - <X0, Phi(0)> - sum_m dt <u_m, o_m>| for terminal (pT, wT), initial (y0, z0)"""
    p_t, w_t = terminal
    y0, z0 = initial
    forward = system.forward(y0, z0, control, window)
    adjoint = system.adjoint(p_t, w_t, window)
    if adjoint.observations.shape != control.values.shape:
        raise ValidationError("Forward and adjoint runs use different discretizations")

    final = forward.final
    lhs = (system.pairing(np.concatenate([final.y, final.z]), stack_adjoint(p_t, w_t))
           - system.pairing(np.concatenate([y0, z0]), stack_adjoint(adjoint.p[0], adjoint.w[0])))
    rhs = control.dt * float(np.sum((control.values * adjoint.observations) @ system.weights))
    return abs(lhs - rhs)


def estimate_observability_from_control(system: CoupledSystem, k: int, samples: int,
                                        rng: np.random.Generator, window: Optional[Window] = None,
                                        families: Sequence[str] = FAMILIES) -> ControlObservabilityEstimate:
    """Lower bound on the observability constant from sampled terminal data.

    For each sample the adjoint initial data gives y0=-w(0), z0=-p(0); the
    HUM control for that start then bounds the same ratio from the control
    side: ||Phi(0)||^2 <= ||u|| ||o||.
    """
    window = (0.0, system.T) if window is None else window
    terminal, modes = modal_terminals(system, k, families)
    gram, factor, phi0 = _observation_gramian(system, terminal, window)
    if np.trace(gram) <= 0:
        logger.warning("Observation sets see nothing: observability constant is +inf")
        return ControlObservabilityEstimate(float('inf'), float('inf'),
                                            np.full(samples, np.inf), np.full(samples, np.inf))

    gramian = HumGramian(matrix=gram, modes=modes, terminal=terminal, initial_adjoint=phi0, factor=factor)
    # the HUM problem controls both families, so it needs the full 2k Gramian
    full = build_hum_gramian(HumProblem(system, window, k, np.zeros(system.n), np.zeros(system.n)))

    n = system.n
    ratios = np.empty(samples)
    control_ratios = np.empty(samples)
    for s in range(samples):
        xi = rng.standard_normal(terminal.shape[1]) if terminal.shape[1] > 1 else np.ones(1)
        init = phi0 @ xi
        init_norm = float(system.wb @ init ** 2)
        obs_norm = float(xi @ gramian.matrix @ xi)
        ratios[s] = init_norm / obs_norm if obs_norm > 0 else np.inf

        problem = HumProblem(system, window, k, -init[:n], -init[n:])
        result = synthesize_with_gramian(problem, full)
        control_ratios[s] = result.control_energy / init_norm if init_norm > 0 else 0.0

    estimate = float(np.max(ratios))
    logger.info(f"Observability from control: estimate={estimate:.4e} over {samples} samples")
    return ControlObservabilityEstimate(estimate=estimate, control_bound=float(np.max(control_ratios)),
                                       ratios=ratios, control_ratios=control_ratios)


def log_control_cost_predictor(lap_value: float, deg_value: float, sigma: float, length: float) -> float:
    """log of (lbar^2 + l^2)(e^{lbar^sigma} + e^{sqrt(l)}) / length"""
    return float(np.log(deg_value ** 2 + lap_value ** 2)
                 + np.logaddexp(deg_value ** sigma, np.sqrt(lap_value)) - np.log(length))


def partial_control_bound_terms(system: CoupledSystem, k: int, length: float,
                                gamma: float = config.DEFAULT_GAMMA) -> Dict[str, float]:
    """Eigenvalues at mode k and the predicted log control cost for a window of the given length"""
    if not length > 0:
        raise ValidationError(f"Window length must be positive, got {length}")
    lap_value = float(system.lap_basis.values[k - 1])
    deg_value = float(system.deg_basis.values[k - 1])
    sigma = sigma_exponent(system.degenerate.spec.alpha, gamma)
    return {
        'k': k,
        'lambda_k': lap_value,
        'lambda_bar_k': deg_value,
        'sigma': sigma,
        'log_cost_predictor': log_control_cost_predictor(lap_value, deg_value, sigma, length),
    }
