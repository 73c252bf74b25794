# services/loop_service.py
import logging
from functools import lru_cache
from typing import Optional, Sequence

import numpy as np
from scipy import fft as sp_fft
from scipy import linalg as sp_linalg

from config import Config
from exceptions import CovarianceFactorizationError, InvalidInputError
from models import GAMMA_MIN, AreaBlocks, LoopSpec, ParamGrid, RoughLoop, SampledLoop
from services.rough_service import RoughService

logger = logging.getLogger(__name__)


def fbl_covariance(H: float, xi, eta):
    """C(xi, eta) = |xi|^{2H} + |eta|^{2H} - |xi - eta|^{2H}"""
    xi = np.asarray(xi, dtype=np.float64)
    eta = np.asarray(eta, dtype=np.float64)
    if np.any((xi < 0) | (xi > 1)) or np.any((eta < 0) | (eta > 1)):
        raise InvalidInputError('covariance arguments must lie in [0, 1]')
    two_h = 2.0 * H
    value = np.abs(xi) ** two_h + np.abs(eta) ** two_h - np.abs(xi - eta) ** two_h
    return float(value) if value.ndim == 0 else value


def default_gamma(H: float) -> float:
    """Regularity exponent attached to a sampled loop of Hurst index H"""
    gamma = min(H - 0.05, 0.5) if H < 1.0 else 0.5
    if gamma <= GAMMA_MIN:
        gamma = 0.5 * (GAMMA_MIN + H)
    return gamma


def _fgn_autocovariance(H: float, n: int) -> np.ndarray:
    k = np.arange(n, dtype=np.float64)
    two_h = 2.0 * H
    return 0.5 * (np.abs(k + 1) ** two_h - 2.0 * k ** two_h + np.abs(k - 1) ** two_h)


@lru_cache(maxsize=16)
def _cholesky_factor(H: float, n: int) -> np.ndarray:
    gamma = _fgn_autocovariance(H, n)
    covariance = sp_linalg.toeplitz(gamma)
    try:
        factor = sp_linalg.cholesky(covariance, lower=True)
    except np.linalg.LinAlgError as e:
        eigenvalues = np.linalg.eigvalsh(covariance)
        raise CovarianceFactorizationError(
            f"fractional noise covariance (H={H}, n={n}) is not positive definite: {e}",
            {'H': H, 'n': n, 'min_eigenvalue': float(eigenvalues.min()),
             'max_eigenvalue': float(eigenvalues.max())}
        )
    factor.setflags(write=False)
    return factor


@lru_cache(maxsize=16)
def _circulant_sqrt_eigenvalues(H: float, n: int) -> np.ndarray:
    gamma = _fgn_autocovariance(H, n + 1)
    row = np.concatenate([gamma, gamma[-2:0:-1]])
    eigenvalues = sp_fft.fft(row).real
    if eigenvalues.min() < -1e-10 * eigenvalues.max():
        raise CovarianceFactorizationError(
            f"circulant embedding (H={H}, n={n}) has negative eigenvalues",
            {'H': H, 'n': n, 'min_eigenvalue': float(eigenvalues.min())}
        )
    root = np.sqrt(np.clip(eigenvalues, 0.0, None) / row.size)
    root.setflags(write=False)
    return root


class LoopService:
    """Brownian and fractional Brownian loops with their areas, and deterministic test loops"""

    def __init__(self, numerics: Optional[dict] = None):
        self.numerics = numerics or Config.NUMERICS_CONFIG
        self.rough = RoughService(self.numerics)

    # Random streams

    def component_generators(self, seed: int, count: int = 3):
        """One counter-based stream per component, derived from the seed only"""
        children = np.random.SeedSequence(int(seed)).spawn(count)
        return [np.random.Generator(np.random.Philox(child)) for child in children]

    def resolve_method(self, method: str, H: float, N_fine: int) -> str:
        if method == 'auto':
            return 'cholesky' if (N_fine <= self.numerics['cholesky_limit'] and H < 1.0) else 'circulant'
        return method

    def sample_fbm(self, H: float, N_fine: int, seed: int, method: str = 'auto') -> np.ndarray:
        """Three independent fractional Brownian motions on the grid i/N_fine, started at 0"""
        method = self.resolve_method(method, H, N_fine)
        if method == 'cholesky' and N_fine > self.numerics['max_factorization_size']:
            raise InvalidInputError(
                f"exact factorization is capped at N_fine={self.numerics['max_factorization_size']}"
            )
        noise = np.empty((N_fine, 3))
        for component, rng in enumerate(self.component_generators(seed)):
            if method == 'cholesky':
                noise[:, component] = _cholesky_factor(H, N_fine) @ rng.standard_normal(N_fine)
            else:
                root = _circulant_sqrt_eigenvalues(H, N_fine)
                draws = rng.standard_normal(root.size) + 1j * rng.standard_normal(root.size)
                noise[:, component] = sp_fft.fft(root * draws).real[:N_fine]
        path = np.zeros((N_fine + 1, 3))
        np.cumsum(noise * float(N_fine) ** -H, axis=0, out=path[1:])
        return path

    def bridge_drift(self, H: float, N_fine: int, endpoint: np.ndarray) -> np.ndarray:
        """h_xi = -(C(xi, 1) / C(1, 1)) X~_1 on the fine grid"""
        nodes = ParamGrid(N_fine).nodes
        ratio = fbl_covariance(H, nodes, 1.0) / fbl_covariance(H, 1.0, 1.0)
        return -np.outer(ratio, endpoint)

    def bridge(self, fbm: np.ndarray, H: float, x0=(0.0, 0.0, 0.0)) -> SampledLoop:
        N_fine = fbm.shape[0] - 1
        values = fbm + self.bridge_drift(H, N_fine, fbm[-1]) + np.asarray(x0, dtype=np.float64)
        return SampledLoop(values)

    def coarsen(self, fine: RoughLoop, N: int) -> RoughLoop:
        """Subsample the path to N intervals and Chen-compose the fine areas"""
        N_fine = fine.N
        if N < 1 or N_fine % N != 0:
            raise InvalidInputError(f"N={N} must divide the fine grid N_fine={N_fine}")
        m = N_fine // N
        X = fine.path.values
        starts = X[:-1:m]
        offsets = (X[:-1].reshape(N, m, 3) - starts[:, None, :])
        steps = fine.path.increments.reshape(N, m, 3)
        blocks = (fine.area.blocks.reshape(N, m, 3, 3).sum(axis=1)
                  + np.einsum('cnj,cnk->cjk', offsets, steps))
        path = SampledLoop(X[::m])
        return RoughLoop(path, AreaBlocks(blocks, path.grid), fine.gamma)

    def _sample_loop(self, spec: LoopSpec, H: float) -> RoughLoop:
        logger.debug(f"sampling loop kind={spec.kind} H={H} N_fine={spec.N_fine} seed={spec.seed}")
        fbm = self.sample_fbm(H, spec.N_fine, spec.seed, spec.method)
        fine = self.rough.piecewise_linear_lift(self.bridge(fbm, H, spec.x0), default_gamma(H))
        return self.coarsen(fine, spec.N)

    def sample_fbl(self, spec: LoopSpec) -> RoughLoop:
        if spec.kind != 'fractional':
            raise InvalidInputError(f"sample_fbl needs kind=fractional, got {spec.kind!r}")
        return self._sample_loop(spec, spec.H)

    def sample_brownian_loop(self, spec: LoopSpec) -> RoughLoop:
        if spec.kind != 'brownian':
            raise InvalidInputError(f"sample_brownian_loop needs kind=brownian, got {spec.kind!r}")
        return self._sample_loop(spec, 0.5)

    def generate(self, spec: LoopSpec) -> RoughLoop:
        if spec.kind == 'circle':
            loop = self.circle_loop(spec.radius, spec.x0, (0.0, 0.0, 1.0), spec.N)
            return self.rough.piecewise_linear_lift(loop, 0.5)
        if spec.kind == 'fractional':
            return self.sample_fbl(spec)
        return self.sample_brownian_loop(spec)

    def fbl_area_translation(self, fbm_values, fbm_blocks, H: float, N: Optional[int] = None,
                             x0=(0.0, 0.0, 0.0)) -> AreaBlocks:
        """Areas of the loop X~ + h from the fBm areas plus left-point Young sums of the drift terms.

        The result lives on the grid N (default: the fine grid) and carries the pair areas
        over [0, xi_j] for every coarse node j, computed directly on the fine grid.
        """
        fbm_values = np.asarray(fbm_values, dtype=np.float64)
        fbm_blocks = np.asarray(fbm_blocks, dtype=np.float64)
        N_fine = fbm_values.shape[0] - 1
        if fbm_blocks.shape != (N_fine, 3, 3):
            raise InvalidInputError(f"fBm areas must have shape ({N_fine}, 3, 3), got {fbm_blocks.shape}")
        N = N or N_fine
        if N_fine % N != 0:
            raise InvalidInputError(f"N={N} must divide the fine grid N_fine={N_fine}")
        m = N_fine // N

        h = self.bridge_drift(H, N_fine, fbm_values[-1])
        Xt = fbm_values
        dXt, dh = np.diff(Xt, axis=0), np.diff(h, axis=0)

        def interval_sums(base: np.ndarray):
            # left-point sums over each coarse interval, offsets measured from the interval start
            offsets_t = (Xt[:-1] - base[0]).reshape(N, m, 3)
            offsets_h = (h[:-1] - base[1]).reshape(N, m, 3)
            cross = (np.einsum('cnj,cnk->cjk', offsets_h, dXt.reshape(N, m, 3))
                     + np.einsum('cnj,cnk->cjk', offsets_t, dh.reshape(N, m, 3))
                     + np.einsum('cnj,cnk->cjk', offsets_h, dh.reshape(N, m, 3)))
            tilde = (fbm_blocks.reshape(N, m, 3, 3).sum(axis=1)
                     + np.einsum('cnj,cnk->cjk', offsets_t, dXt.reshape(N, m, 3)))
            return tilde + cross

        starts = (np.repeat(Xt[:-1:m], m, axis=0), np.repeat(h[:-1:m], m, axis=0))
        blocks = interval_sums(starts)

        # pairs [0, xi_j]: prefix sums with offsets from node 0
        steps = (fbm_blocks
                 + np.einsum('nj,nk->njk', Xt[:-1] - Xt[0], dXt)
                 + np.einsum('nj,nk->njk', h[:-1] - h[0], dXt)
                 + np.einsum('nj,nk->njk', Xt[:-1] - Xt[0], dh)
                 + np.einsum('nj,nk->njk', h[:-1] - h[0], dh))
        prefix = np.cumsum(steps, axis=0)
        pairs = {(0, j): prefix[j * m - 1] for j in range(1, N + 1)}

        logger.debug(f"translated areas on N={N} from N_fine={N_fine}, endpoint={fbm_values[-1]}")
        return AreaBlocks(blocks, ParamGrid(N), pairs)

    # Deterministic loops

    def plane_basis(self, axis) -> np.ndarray:
        """Columns e1, e2, axis of a right-handed frame; axis z gives the identity"""
        axis = np.asarray(axis, dtype=np.float64)
        length = float(np.linalg.norm(axis))
        if not np.isfinite(length) or length == 0.0:
            raise InvalidInputError('circle axis must be a non-zero vector')
        a = axis / length
        helper = np.array([1.0, 0.0, 0.0]) if abs(a[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
        e1 = helper - np.dot(helper, a) * a
        e1 /= np.linalg.norm(e1)
        e2 = np.cross(a, e1)
        return np.column_stack([e1, e2, a])

    def circle_loop(self, radius: float, center: Sequence[float] = (0.0, 0.0, 0.0),
                    axis: Sequence[float] = (0.0, 0.0, 1.0), N: int = 256) -> SampledLoop:
        if not radius > 0:
            raise InvalidInputError(f"radius must be positive, got {radius}")
        basis = self.plane_basis(axis)
        theta = 2.0 * np.pi * ParamGrid(N).nodes
        planar = radius * np.column_stack([np.cos(theta), np.sin(theta), np.zeros_like(theta)])
        return SampledLoop(planar @ basis.T + np.asarray(center, dtype=np.float64))

    def perturbed_circle_loop(self, radius: float = 1.0, amplitude: float = 0.2, mode: int = 3,
                              N: int = 256, center: Sequence[float] = (0.0, 0.0, 0.0)) -> SampledLoop:
        """Non-planar closed curve with non-uniform curvature"""
        if not radius > 0:
            raise InvalidInputError(f"radius must be positive, got {radius}")
        theta = 2.0 * np.pi * ParamGrid(N).nodes
        rho = radius * (1.0 + amplitude * np.cos(mode * theta))
        values = np.column_stack([
            rho * np.cos(theta),
            rho * np.sin(theta),
            radius * amplitude * np.sin(mode * theta)
        ])
        return SampledLoop(values + np.asarray(center, dtype=np.float64))

    def circle_arc_areas(self, radius: float, N: int, center: Sequence[float] = (0.0, 0.0, 0.0),
                         axis: Sequence[float] = (0.0, 0.0, 1.0)) -> AreaBlocks:
        """Exact areas int_a^b (X - X_a) (x) dX of the circle over each grid interval"""
        loop = self.circle_loop(radius, center, axis, N)
        dX = loop.increments
        step = 2.0 * np.pi / N
        levy = 0.5 * radius ** 2 * (step - np.sin(step))
        basis = self.plane_basis(axis)
        rotation = np.zeros((3, 3))
        rotation[0, 1], rotation[1, 0] = levy, -levy
        antisymmetric = basis @ rotation @ basis.T
        blocks = 0.5 * np.einsum('ij,ik->ijk', dX, dX) + antisymmetric
        return AreaBlocks(blocks, loop.grid)
