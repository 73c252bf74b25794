# services/young_service.py
import logging
from typing import Optional

import numpy as np

from exceptions import GridMismatchError, InvalidInputError
from models import KernelField, SampledLoop
from services.geometry_service import fan_out
from services.kernel_service import KernelService

logger = logging.getLogger(__name__)


class YoungService:
    """Left-endpoint Riemann-Stieltjes sums and the Young-regime velocity field"""

    def __init__(self, threads: int = 1, chunk: Optional[int] = None):
        self.threads = threads
        self.chunk = chunk

    def young_integral(self, f, g: SampledLoop, a: int = 0, b: Optional[int] = None) -> np.ndarray:
        """sum_{a <= i < b} f(xi_i) (g_{i+1} - g_i) for samples f of shape (N+1, ..., 3)"""
        f = np.asarray(f, dtype=np.float64)
        N = g.N
        if f.shape[0] != N + 1:
            raise GridMismatchError(f"integrand has {f.shape[0]} samples, integrator grid has N={N}")
        if f.shape[-1] != 3:
            raise InvalidInputError(f"integrand must contract against 3-vectors, got shape {f.shape}")
        if not np.all(np.isfinite(f)):
            raise InvalidInputError('integrand has non-finite samples')
        b = N if b is None else b
        if not (0 <= a <= b <= N):
            raise InvalidInputError(f"integration range [{a}, {b}] outside grid 0..{N}")
        return np.einsum('i...j,ij->...', f[a:b], g.increments[a:b])

    def velocity_young(self, loop: SampledLoop, field: KernelField, x) -> np.ndarray:
        """V(x) = int A(x - Y) dY as a left-point sum over the full loop; x is (3,) or (M, 3)"""
        c = field.prefactor
        mu2 = field.mu ** 2
        nodes = loop.values[:-1]
        dY = loop.increments

        def chunk_velocity(targets: np.ndarray) -> np.ndarray:
            r = targets[:, None, :] - nodes[None, :, :]
            phi = (np.einsum('tnk,tnk->tn', r, r) + mu2) ** -1.5
            return c * np.einsum('tn,tnk->tk', phi, np.cross(r, dY[None, :, :]))

        return self._evaluate(chunk_velocity, x, loop)

    def grad_velocity_young(self, loop: SampledLoop, field: KernelField, x) -> np.ndarray:
        """[..., m, p] = d_p V^m for the left-point velocity"""
        kernel = KernelService(field)
        nodes = loop.values[:-1]
        dY = loop.increments

        def chunk_gradient(targets: np.ndarray) -> np.ndarray:
            gA = kernel.grad_A(targets[:, None, :] - nodes[None, :, :])
            return np.einsum('tnmjp,nj->tmp', gA, dY)

        return self._evaluate(chunk_gradient, x, loop)

    def _evaluate(self, fn, x, loop: SampledLoop) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if not np.all(np.isfinite(x)):
            raise InvalidInputError('evaluation point is not finite')
        single = x.ndim == 1
        targets = x[None, :] if single else x
        if targets.shape[-1] != 3:
            raise InvalidInputError(f"evaluation points must be 3-vectors, got shape {x.shape}")
        result = fan_out(fn, targets, self.chunk, self.threads)
        return result[0] if single else result
