# services/dynamics_service.py
import logging
import math
from typing import List, Optional, Sequence, Tuple

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy.optimize import curve_fit

from config import Config
from exceptions import BlowupError, ConfigValidationError, InsufficientDataError, InvalidInputError
from models import (
    BlowupReport, ControlledLoop, EvolutionState, EvolveConfig, KernelField,
    RoughLoop, SampledLoop, Trajectory, as_gamma
)
from services.geometry_service import GeometryService, fan_out
from services.kernel_service import KernelService
from services.rough_service import RoughService
from services.young_service import YoungService

logger = logging.getLogger(__name__)


class DynamicsService:
    """Velocity fields of a controlled loop and the coupled evolution of (Y, Y')"""

    def __init__(self, field: KernelField, threads: int = 1, numerics: Optional[dict] = None):
        self.field = field
        self.threads = threads
        self.numerics = numerics or Config.NUMERICS_CONFIG
        self.kernel = KernelService(field)
        self.geometry = GeometryService(self.numerics)
        self.rough = RoughService(self.numerics)
        self.young = YoungService(threads, self.numerics['target_chunk'])

    # Velocity fields

    def _correction_blocks(self, Y: ControlledLoop) -> np.ndarray:
        """B_i = Y'_i X2_i Y'_i^T"""
        Yp = Y.derivative[:-1]
        return np.einsum('iqk,ikl,ijl->iqj', Yp, Y.reference.area.blocks, Yp)

    def _targets(self, x) -> Tuple[np.ndarray, bool]:
        x = np.asarray(x, dtype=np.float64)
        if not np.all(np.isfinite(x)):
            raise InvalidInputError('evaluation point is not finite')
        single = x.ndim == 1
        return (x[None, :] if single else x), single

    def velocity_rough(self, state: EvolutionState, x) -> np.ndarray:
        """Compensated sum of A(x - Y) dY with Z' = -grad A(x - Y) Y'"""
        return self._rough_velocity_of(state.Y, x)

    def grad_velocity_rough(self, state: EvolutionState, x) -> np.ndarray:
        """[..., m, p] = d_p V^m, the x-derivative of the compensated sum"""
        return self._rough_gradient_of(state.Y, x)

    def _rough_velocity_of(self, Y: ControlledLoop, x) -> np.ndarray:
        targets, single = self._targets(x)
        nodes = Y.values.values[:-1]
        dY = Y.values.increments
        B = self._correction_blocks(Y)

        def chunk_velocity(points: np.ndarray) -> np.ndarray:
            r = points[:, None, :] - nodes[None, :, :]
            return (np.einsum('tnmj,nj->tm', self.kernel.eval_A(r), dY)
                    - np.einsum('tnmjq,nqj->tm', self.kernel.grad_A(r), B))

        result = fan_out(chunk_velocity, targets, self.numerics['target_chunk'], self.threads)
        return result[0] if single else result

    def _rough_gradient_of(self, Y: ControlledLoop, x) -> np.ndarray:
        targets, single = self._targets(x)
        nodes = Y.values.values[:-1]
        dY = Y.values.increments
        B = self._correction_blocks(Y)

        def chunk_gradient(points: np.ndarray) -> np.ndarray:
            r = points[:, None, :] - nodes[None, :, :]
            return (np.einsum('tnmjp,nj->tmp', self.kernel.grad_A(r), dY)
                    - np.einsum('tnmjqp,nqj->tmp', self.kernel.grad2_A(r), B))

        result = fan_out(chunk_gradient, targets, self.numerics['target_chunk'], self.threads)
        return result[0] if single else result

    def field_at_nodes(self, Y: ControlledLoop, regime: str = 'rough') -> Tuple[np.ndarray, np.ndarray]:
        """Velocity (N+1, 3) and gradient (N+1, 3, 3) at the curve nodes; node N copies node 0"""
        points = Y.values.values[:-1]
        if regime == 'young':
            velocity = self.young.velocity_young(Y.values, self.field, points)
            gradient = self.young.grad_velocity_young(Y.values, self.field, points)
        else:
            velocity = self._rough_velocity_of(Y, points)
            gradient = self._rough_gradient_of(Y, points)
        velocity = np.concatenate([velocity, velocity[:1]], axis=0)
        gradient = np.concatenate([gradient, gradient[:1]], axis=0)
        return velocity, gradient

    # States and steps

    def make_state(self, Y: ControlledLoop, t: float, cfg: EvolveConfig) -> EvolutionState:
        velocity, gradient = self.field_at_nodes(Y, cfg.regime)
        self._check_finite(velocity, gradient, t=t)
        return EvolutionState(
            t=t,
            Y=Y,
            velocity=velocity,
            gradient=gradient,
            holder=self.geometry.holder_seminorm(Y.values, cfg.gamma, 'auto'),
            remainder_holder=self.rough.remainder_holder(Y, cfg.gamma)
        )

    def initial_state(self, initial: RoughLoop, cfg: EvolveConfig) -> EvolutionState:
        return self.make_state(ControlledLoop.identity(initial), 0.0, cfg)

    def _check_finite(self, *arrays: np.ndarray, t: float):
        for array in arrays:
            flat = array.reshape(array.shape[0], -1)
            bad = ~np.all(np.isfinite(flat), axis=1)
            if bad.any():
                node = int(np.argmax(bad))
                raise BlowupError(f"non-finite state at node {node}, t={t:.6g}", node, t)

    def _controlled(self, reference: RoughLoop, values: np.ndarray, derivative: np.ndarray,
                    t: float) -> ControlledLoop:
        self._check_finite(values, derivative, t=t)
        derivative = np.array(derivative)
        derivative[-1] = derivative[0]
        return ControlledLoop(reference, SampledLoop(values), derivative)

    def step(self, state: EvolutionState, cfg: EvolveConfig) -> EvolutionState:
        """One explicit step of dY/dt = V(Y), dY'/dt = grad V(Y) Y'"""
        dt = cfg.dt
        t_new = state.t + dt
        Y, Yp = state.Y.values.values, state.Y.derivative
        rate_p = np.einsum('nij,njk->nik', state.gradient, Yp)

        if cfg.scheme == 'euler':
            values = Y + dt * state.velocity
            derivative = Yp + dt * rate_p
        else:
            predictor = self._controlled(state.reference, Y + dt * state.velocity, Yp + dt * rate_p, t_new)
            velocity, gradient = self.field_at_nodes(predictor, cfg.regime)
            self._check_finite(velocity, gradient, t=t_new)
            rate_pred = np.einsum('nij,njk->nik', gradient, predictor.derivative)
            values = Y + 0.5 * dt * (state.velocity + velocity)
            derivative = Yp + 0.5 * dt * (rate_p + rate_pred)

        return self.make_state(self._controlled(state.reference, values, derivative, t_new), t_new, cfg)

    def evolve(self, initial: RoughLoop, cfg: EvolveConfig,
               start: Optional[EvolutionState] = None, start_step: int = 0) -> Trajectory:
        """Iterate step from Y = X, Y' = Id (or from `start`) up to t_end or a blow-up trigger"""
        state = start if start is not None else self.initial_state(initial, cfg)
        if start is None:
            initial_holder = state.holder
        else:
            initial_holder = self.geometry.holder_seminorm(initial.path, cfg.gamma, 'auto')
        if not cfg.blowup_threshold > initial_holder:
            raise ConfigValidationError(
                'evolve.blowup_threshold',
                f"{cfg.blowup_threshold:.6g} does not exceed the initial Hölder seminorm {initial_holder:.6g}"
            )
        trajectory = Trajectory(horizon=self.horizon_heuristic(initial, cfg.gamma))
        trajectory.snapshots.append(state)
        trajectory.snapshot_steps.append(start_step)
        self._record(trajectory, state)
        remainder_alarm = False

        logger.info(
            f"evolve: N={initial.N} dt={cfg.dt} t_end={cfg.t_end} scheme={cfg.scheme} "
            f"regime={cfg.regime} horizon={trajectory.horizon:.4g}"
        )
        for k in range(start_step + 1, cfg.n_steps + 1):
            try:
                state = self.step(state, cfg)
            except BlowupError as e:
                logger.warning(f"blow-up at t={e.t:.6g}: {e}")
                trajectory.blowup_flag = True
                trajectory.blowup_reason = 'non-finite'
                trajectory.blowup_node = e.node
                break
            trajectory.steps_taken += 1
            self._record(trajectory, state)
            logger.debug(f"step {k}: t={state.t:.6g} holder={state.holder:.6g}")

            if not trajectory.past_horizon and state.t > trajectory.horizon:
                trajectory.past_horizon = True
                logger.warning(f"running past the heuristic existence horizon T0={trajectory.horizon:.4g}")
            if not remainder_alarm and state.remainder_holder > cfg.remainder_threshold:
                remainder_alarm = True
                logger.warning(
                    f"remainder seminorm {state.remainder_holder:.4g} exceeds {cfg.remainder_threshold:.4g}"
                    f" at t={state.t:.6g}"
                )

            exploded = state.holder > cfg.blowup_threshold
            if exploded or k % cfg.snapshot_stride == 0 or k == cfg.n_steps:
                trajectory.snapshots.append(state)
                trajectory.snapshot_steps.append(k)
            if exploded:
                trajectory.blowup_flag = True
                trajectory.blowup_reason = 'threshold'
                logger.warning(f"Hölder seminorm {state.holder:.4g} above threshold at t={state.t:.6g}")
                break

        logger.info(f"evolve finished: steps={trajectory.steps_taken} blowup={trajectory.blowup_flag}")
        return trajectory

    def _record(self, trajectory: Trajectory, state: EvolutionState):
        trajectory.times.append(state.t)
        trajectory.holder_series.append(state.holder)
        trajectory.remainder_series.append(state.remainder_holder)

    # Auxiliary flows

    def advect(self, state: EvolutionState, points, dt: float, regime: str = 'rough') -> np.ndarray:
        """Move passive tracers one euler step with the current velocity field"""
        points = np.asarray(points, dtype=np.float64)
        if regime == 'young':
            velocity = self.young.velocity_young(state.Y.values, self.field, points)
        else:
            velocity = self.velocity_rough(state, points)
        return points + dt * velocity

    def remainder_rate(self, state: EvolutionState, pairs: Optional[Sequence[Tuple[int, int]]] = None) -> np.ndarray:
        """d/dt R_{eta xi} = grad V(Y_eta) R_{eta xi} + int_0^1 (grad V(Y_eta + s d) - grad V(Y_eta)) d ds

        d = Y_xi - Y_eta. The s-integral equals the double integral of the Hessian of the rough field
        and is evaluated by Gauss-Legendre quadrature on the compensated gradient.
        """
        eta, xi = self._pair_indices(state.Y.N, pairs)
        Y = state.Y.values.values
        d = Y[xi] - Y[eta]
        nodes, weights = leggauss(self.numerics['remainder_quadrature'])
        s, weights = 0.5 * (nodes + 1.0), 0.5 * weights

        points = Y[eta][None, :, :] + s[:, None, None] * d[None, :, :]
        gradients = self._rough_gradient_of(state.Y, points.reshape(-1, 3)).reshape(s.size, -1, 3, 3)
        base = state.gradient[eta]
        taylor = np.einsum('q,qnij,nj->ni', weights, gradients - base[None], d)
        linear = np.einsum('nij,nj->ni', base, self.remainders(state.Y, np.column_stack([eta, xi])))
        return linear + taylor

    def remainders(self, Y: ControlledLoop, pairs: Optional[Sequence[Tuple[int, int]]] = None) -> np.ndarray:
        eta, xi = self._pair_indices(Y.N, pairs)
        X, V = Y.reference.path.values, Y.values.values
        return (V[xi] - V[eta]) - np.einsum('nij,nj->ni', Y.derivative[eta], X[xi] - X[eta])

    def _pair_indices(self, N: int, pairs) -> Tuple[np.ndarray, np.ndarray]:
        if pairs is None:
            eta, xi = np.triu_indices(N + 1, k=1)
            return eta, xi
        pairs = np.asarray(pairs, dtype=int).reshape(-1, 2)
        if pairs.size and (pairs.min() < 0 or pairs.max() > N):
            raise InvalidInputError(f"pair index out of range for N={N}")
        return pairs[:, 0], pairs[:, 1]

    # Fixed-point map

    def picard_map(self, family: List[ControlledLoop], times: Sequence[float], initial: RoughLoop,
                   cfg: EvolveConfig) -> List[ControlledLoop]:
        """F(Y)(t) = X + int_0^t V^{Y(s)}(Y(s)) ds by the trapezoid rule on the stored times; Y' likewise"""
        times = np.asarray(times, dtype=np.float64)
        if len(family) != times.size or times.size < 1:
            raise InvalidInputError(f"family of {len(family)} loops does not match {times.size} times")
        horizon = self.horizon_heuristic(initial, cfg.gamma)
        if times[-1] > horizon:
            logger.warning(f"Picard horizon {times[-1]:.4g} beyond heuristic T0={horizon:.4g}")

        rates_y, rates_p = [], []
        for member in family:
            velocity, gradient = self.field_at_nodes(member, cfg.regime)
            rates_y.append(velocity)
            rates_p.append(np.einsum('nij,njk->nik', gradient, member.derivative))

        X = initial.path.values
        eye = np.broadcast_to(np.eye(3), (initial.N + 1, 3, 3))
        acc_y, acc_p = np.zeros_like(X), np.zeros((initial.N + 1, 3, 3))
        result = [ControlledLoop(initial, SampledLoop(X), eye)]
        for k in range(1, times.size):
            dt = times[k] - times[k - 1]
            acc_y = acc_y + 0.5 * dt * (rates_y[k - 1] + rates_y[k])
            acc_p = acc_p + 0.5 * dt * (rates_p[k - 1] + rates_p[k])
            result.append(self._controlled(initial, X + acc_y, eye + acc_p, float(times[k])))
        return result

    def picard_iterate(self, initial: RoughLoop, times: Sequence[float], cfg: EvolveConfig,
                       iterations: int = 10) -> Tuple[List[ControlledLoop], List[float]]:
        """Iterate the Picard map from the constant family; returns the last iterate and successive distances"""
        family = [ControlledLoop.identity(initial)] * len(times)
        distances = []
        for _ in range(iterations):
            updated = self.picard_map(family, times, initial, cfg)
            distances.append(max(
                float(np.max(np.abs(new.values.values - old.values.values)))
                for new, old in zip(updated, family)
            ))
            family = updated
            logger.debug(f"Picard distance {distances[-1]:.3e}")
        return family, distances

    # Horizon and blow-up

    def horizon_heuristic(self, initial: RoughLoop, gamma=None, safety: Optional[float] = None) -> float:
        """T0 = safety / (sum_{n=1..3} |grad^n A| (1 + C_X)^5 (1 + ||X||_D)^3)"""
        gamma = as_gamma(gamma if gamma is not None else initial.gamma)
        safety = self.numerics['horizon_safety'] if safety is None else safety
        bound = sum(self.kernel.kernel_norm_bounds(n) for n in (1, 2, 3))
        if bound == 0.0:
            return math.inf
        C_X = (1.0 + self.geometry.holder_seminorm(initial.path, gamma, 'auto')
               + self.rough.area_holder_seminorm(initial, gamma))
        d_norm = self.rough.controlled_norm(ControlledLoop.identity(initial), gamma).d_norm
        return safety / (bound * (1.0 + C_X) ** 5 * (1.0 + d_norm) ** 3)

    def blowup_report(self, trajectory, gamma=None) -> BlowupReport:
        """Fit the tail of ||Y(t)||_gamma to C (t_hat - t)^{-1/2}.

        `trajectory` is a Trajectory or a (times, values) pair. With a Trajectory and an
        explicit gamma the series is re-estimated on the stored snapshots.
        """
        if isinstance(trajectory, Trajectory):
            if gamma is not None:
                times = [s.t for s in trajectory.snapshots]
                values = [self.geometry.holder_seminorm(s.Y.values, gamma, 'auto') for s in trajectory.snapshots]
            else:
                times, values = trajectory.times, trajectory.holder_series
        else:
            times, values = trajectory
        return fit_blowup(times, values, self.numerics)


def fit_blowup(times, values, numerics: Optional[dict] = None) -> BlowupReport:
    numerics = numerics or Config.NUMERICS_CONFIG
    t = np.asarray(times, dtype=np.float64)
    y = np.asarray(values, dtype=np.float64)
    keep = np.isfinite(t) & np.isfinite(y) & (y > 0)
    t, y = t[keep], y[keep]
    minimum = numerics['blowup_min_points']
    if t.size < minimum:
        raise InsufficientDataError(f"blow-up fit needs at least {minimum} points, got {t.size}")

    tail = max(minimum, t.size // 2)
    t, y = t[-tail:], y[-tail:]
    span = float(t[-1] - t[0])

    # y^{-2} = (t_hat - t) / C^2 is linear in t
    slope, intercept = np.polyfit(t, y ** -2, 1)
    if not slope < 0:
        return BlowupReport(False, None, None, math.inf, False, int(tail))
    t_hat, C = -intercept / slope, 1.0 / math.sqrt(-slope)

    def shape(s, t_hat_, C_):
        return C_ * np.clip(t_hat_ - s, 1e-300, None) ** -0.5

    try:
        (t_fit, C_fit), _ = curve_fit(
            shape, t, y, p0=(max(t_hat, t[-1] * (1 + 1e-12) + 1e-12), C),
            bounds=([t[-1], 0.0], [np.inf, np.inf]), maxfev=10000
        )
        t_hat, C = float(t_fit), float(C_fit)
    except (RuntimeError, ValueError) as e:
        logger.debug(f"blow-up refinement kept the linear fit: {e}")

    fitted = shape(t, t_hat, C)
    residual = float(np.sqrt(np.mean(((y - fitted) / y) ** 2)))
    threshold = numerics['blowup_residual_threshold']
    accepted = residual < threshold and t_hat <= t[-1] + span
    consistent = bool(np.all(y >= (1.0 - threshold) * fitted))
    return BlowupReport(bool(accepted), float(t_hat), float(C), residual, consistent, int(tail))
