# services/diagnostics_service.py
import logging
from typing import Callable, List, Optional, Sequence, Union

import numpy as np
from scipy.linalg import expm

from config import Config
from exceptions import (
    GridMismatchError, InsufficientDataError, InvalidInputError, MeshTooFineError
)
from models import (
    ControlledLoop, CovariationSeries, EvolutionState, EvolveConfig, LipschitzRow,
    RoughLoop, SampledLoop, StretchReport, StretchState
)
from services.dynamics_service import DynamicsService
from services.rough_service import RoughService

logger = logging.getLogger(__name__)

PERTURBATIONS = ('bump', 'translation')


class DiagnosticsService:
    """Covariation estimators, covariation transport, stretching frames and Lipschitz ratios"""

    def __init__(self, numerics: Optional[dict] = None):
        self.numerics = numerics or Config.NUMERICS_CONFIG
        self.rough = RoughService(self.numerics)

    def _mesh_cells(self, N: int, mesh: float) -> int:
        if mesh <= 0 or mesh > 1:
            raise InvalidInputError(f"covariation mesh must lie in (0, 1], got {mesh}")
        cells = mesh * N
        if cells < 1 - 1e-9:
            raise MeshTooFineError(f"mesh {mesh} is finer than the grid spacing 1/{N}")
        m = int(round(cells))
        if abs(cells - m) > 1e-9 * max(1.0, cells):
            raise InvalidInputError(f"mesh {mesh} is not a multiple of the grid spacing 1/{N}")
        return m

    def covariation_estimate(self, loop: SampledLoop, mesh: float) -> CovariationSeries:
        """sum over mesh cells of (X_{b ^ xi} - X_{a ^ xi})(x)(same), the curve held at X_1 beyond 1"""
        N = loop.N
        m = self._mesh_cells(N, mesh)
        X = loop.values
        starts = np.arange(0, N + 1, m)
        ends = np.minimum(starts + m, N)
        full = X[ends] - X[starts]
        squares = np.einsum('cj,ck->cjk', full, full)
        completed = np.zeros((starts.size + 1, 3, 3))
        np.cumsum(squares, axis=0, out=completed[1:])

        k = np.arange(N + 1)
        cell = k // m
        partial = X[k] - X[cell * m]
        values = completed[cell] + np.einsum('nj,nk->njk', partial, partial)
        return CovariationSeries(values, mesh, loop.grid)

    def covariation_estimate_shift(self, loop: SampledLoop, mesh: float) -> CovariationSeries:
        """(1/eps) int_0^xi (X_{rho+eps} - X_rho)(x)(same) d rho as a left-point sum on the grid"""
        N = loop.N
        m = self._mesh_cells(N, mesh)
        X = loop.values
        shifted = X[np.minimum(np.arange(N) + m, N)] - X[:-1]
        density = np.einsum('nj,nk->njk', shifted, shifted) / (mesh * N)
        values = np.zeros((N + 1, 3, 3))
        np.cumsum(density, axis=0, out=values[1:])
        return CovariationSeries(values, mesh, loop.grid)

    def covariation_predicted(self, derivative: Union[np.ndarray, ControlledLoop],
                              base: CovariationSeries) -> CovariationSeries:
        """sum_{i<k} Y'_i d[X, X*]_i Y'_i^T"""
        Yp = derivative.derivative if isinstance(derivative, ControlledLoop) else np.asarray(derivative)
        if Yp.shape != (base.grid.N + 1, 3, 3):
            raise GridMismatchError(
                f"derivative samples {Yp.shape} do not match covariation grid N={base.grid.N}"
            )
        steps = np.einsum('nij,njk,nlk->nil', Yp[:-1], base.increments, Yp[:-1])
        values = np.zeros_like(base.values)
        np.cumsum(steps, axis=0, out=values[1:])
        return CovariationSeries(values, base.mesh, base.grid)

    def stretching_decomposition(self, history: Sequence[EvolutionState], scheme: str = 'euler',
                                 base_density=None) -> StretchReport:
        """Split grad V into S + T, integrate the frame Q (dQ/dt = -QT) and the stretch of S~ = Q S Q^T.

        Two reconstructions of Y' D Y'^T for the base density D are checked: Q^T M D M^T Q with
        M = exp(int_0^t S~), the integral taken by the trapezoid rule over the stored samples, and
        Q^T E D E^T Q with E the stepwise product of exponentials.
        """
        if len(history) < 2:
            raise InsufficientDataError(f"stretching needs at least two stored states, got {len(history)}")
        N = history[0].Y.N
        D = np.eye(3) if base_density is None else np.asarray(base_density, dtype=np.float64)
        D = np.broadcast_to(D, (N + 1, 3, 3))

        def split(state: EvolutionState):
            H = state.gradient
            return 0.5 * (H + np.swapaxes(H, 1, 2)), 0.5 * (H - np.swapaxes(H, 1, 2))

        def rotated(Q: np.ndarray, S: np.ndarray) -> np.ndarray:
            return Q @ S @ np.swapaxes(Q, 1, 2)

        Q = np.broadcast_to(np.eye(3), (N + 1, 3, 3)).copy()
        E = Q.copy()
        integral = np.zeros((N + 1, 3, 3))
        S, T = split(history[0])
        states = [StretchState(history[0].t, S, T, Q, E, E.copy())]
        residuals = [self._reconstruction_residual(history[0], Q, E, D)]
        product_residuals = [self._reconstruction_residual(history[0], Q, E, D)]

        for previous, current in zip(history[:-1], history[1:]):
            dt = current.t - previous.t
            S_prev, T_prev = split(previous)
            S_next, T_next = split(current)
            if scheme == 'heun':
                Q_next = Q @ expm(-0.5 * dt * (T_prev + T_next))
                S_rot = 0.5 * (rotated(Q, S_prev) + rotated(Q_next, S_next))
            else:
                Q_next = Q @ expm(-dt * T_prev)
                S_rot = rotated(Q, S_prev)
            E = expm(dt * S_rot) @ E
            integral = integral + 0.5 * dt * (rotated(Q, S_prev) + rotated(Q_next, S_next))
            M = expm(integral)
            Q = Q_next
            states.append(StretchState(current.t, S_next, T_next, Q, E, M))
            residuals.append(self._reconstruction_residual(current, Q, M, D))
            product_residuals.append(self._reconstruction_residual(current, Q, E, D))

        report = StretchReport(states, residuals, product_residuals)
        logger.debug(
            f"stretching: {len(states)} states, orthogonality {report.max_orthogonality_defect:.2e}, "
            f"residual {max(residuals):.2e} (stepwise {max(product_residuals):.2e})"
        )
        return report

    def _reconstruction_residual(self, state: EvolutionState, Q: np.ndarray, stretch: np.ndarray,
                                 D: np.ndarray) -> float:
        Yp = state.Y.derivative
        direct = Yp @ D @ np.swapaxes(Yp, 1, 2)
        QT = np.swapaxes(Q, 1, 2)
        rebuilt = QT @ stretch @ D @ np.swapaxes(stretch, 1, 2) @ Q
        scale = max(float(np.max(np.abs(direct))), 1e-300)
        return float(np.max(np.abs(direct - rebuilt))) / scale

    def perturbation_field(self, kind: Union[str, Callable], N: int) -> np.ndarray:
        if callable(kind):
            return np.asarray(kind(np.arange(N + 1) / N), dtype=np.float64)
        if kind not in PERTURBATIONS:
            raise InvalidInputError(f"perturbation must be one of {PERTURBATIONS}, got {kind!r}")
        if kind == 'translation':
            return np.ones((N + 1, 3))
        xi = np.arange(N + 1) / N
        return np.column_stack([np.zeros_like(xi), 0.5 * np.sin(2.0 * np.pi * xi) ** 2,
                                np.sin(2.0 * np.pi * xi)])

    def lipschitz_experiment(self, initial: RoughLoop, deltas: Sequence[float], cfg: EvolveConfig,
                             dynamics: DynamicsService,
                             perturbation: Union[str, Callable] = 'bump') -> List[LipschitzRow]:
        """sup_t d(Y(t), Y~(t)) / d*(X, X~) for perturbations of size delta, areas re-lifted"""
        field = self.perturbation_field(perturbation, initial.N)
        reference = dynamics.evolve(initial, cfg)
        rows = []
        for delta in deltas:
            perturbed_path = SampledLoop(initial.path.values + delta * field)
            perturbed = self.rough.piecewise_linear_lift(perturbed_path, initial.gamma)
            denominator = self.rough.rough_distance_star(initial, perturbed, cfg.gamma)
            if denominator == 0.0:
                rows.append(LipschitzRow(float(delta), 0.0, 0.0, None, True, False))
                continue

            branch = dynamics.evolve(perturbed, cfg)
            blown_up = reference.blowup_flag or branch.blowup_flag
            numerator = 0.0
            for first, second in zip(reference.snapshots, branch.snapshots):
                lifted, lifted_tilde = self.rough.lift_controlled(first.Y), self.rough.lift_controlled(second.Y)
                numerator = max(numerator, self.rough.rough_distance(lifted, lifted_tilde, cfg.gamma))
            rows.append(LipschitzRow(float(delta), numerator, denominator, numerator / denominator,
                                     False, blown_up))
            logger.debug(f"Lipschitz delta={delta:.1e}: ratio {numerator / denominator:.4g}")
        return rows
