# services/kernel_service.py
import logging
from functools import lru_cache
from typing import Tuple

import numpy as np
from scipy.optimize import minimize_scalar

from config import Config
from exceptions import UnsupportedOrderError
from models import KernelField

logger = logging.getLogger(__name__)

LEVI_CIVITA = np.zeros((3, 3, 3))
LEVI_CIVITA[0, 1, 2] = LEVI_CIVITA[1, 2, 0] = LEVI_CIVITA[2, 0, 1] = 1.0
LEVI_CIVITA[0, 2, 1] = LEVI_CIVITA[2, 1, 0] = LEVI_CIVITA[1, 0, 2] = -1.0

EYE = np.eye(3)
SQRT3 = np.sqrt(3.0)


# Radial profiles bounding the entrywise-sum norm of grad^n u, u = x (|x|^2 + mu^2)^{-3/2},
# with |x|_1 <= sqrt(3)|x|; the Levi-Civita contraction contributes the outer factor 2.
def _radial_profile(n: int, rho: float, mu: float) -> float:
    s = rho * rho + mu * mu
    if n == 0:
        return SQRT3 * rho * s ** -1.5
    if n == 1:
        return 3.0 * s ** -1.5 + 9.0 * rho ** 2 * s ** -2.5
    if n == 2:
        return 27.0 * SQRT3 * rho * s ** -2.5 + 45.0 * SQRT3 * rho ** 3 * s ** -3.5
    if n == 3:
        return 81.0 * s ** -2.5 + 810.0 * rho ** 2 * s ** -3.5 + 945.0 * rho ** 4 * s ** -4.5
    raise UnsupportedOrderError(f"closed-form kernel derivatives available up to order 3, got {n}")


@lru_cache(maxsize=64)
def radial_maximum(n: int, mu: float) -> Tuple[float, float]:
    """Return (argmax, max) of the order-n radial profile over rho >= 0"""
    if n < 0 or n > 3:
        raise UnsupportedOrderError(f"closed-form kernel derivatives available up to order 3, got {n}")
    grid = np.linspace(0.0, 10.0 * mu, 2001)
    profile = np.array([_radial_profile(n, rho, mu) for rho in grid])
    k = int(np.argmax(profile))
    lo, hi = grid[max(k - 1, 0)], grid[min(k + 1, grid.size - 1)]
    best_rho, best = float(grid[k]), float(profile[k])
    if hi > lo:
        result = minimize_scalar(
            lambda rho: -_radial_profile(n, rho, mu), bounds=(lo, hi), method='bounded',
            options={'xatol': Config.NUMERICS_CONFIG['radial_tolerance'] * mu}
        )
        if -result.fun > best:
            best_rho, best = float(result.x), float(-result.fun)
    return best_rho, best


class KernelService:
    """Regularized Biot-Savart kernel A(x) = (Gamma/4pi) (|x|^2+mu^2)^{-3/2} [x]_x and its derivatives.

    All evaluators accept a single point of shape (3,) or a batch (..., 3).
    """

    def __init__(self, field: KernelField):
        self.field = field
        self.c = field.prefactor
        self.mu2 = field.mu * field.mu

    def _s(self, x: np.ndarray) -> np.ndarray:
        return np.einsum('...k,...k->...', x, x) + self.mu2

    def kernel_vector(self, x) -> np.ndarray:
        """u(x) = x (|x|^2+mu^2)^{-3/2}"""
        x = np.asarray(x, dtype=np.float64)
        return x * (self._s(x) ** -1.5)[..., None]

    def eval_A(self, x) -> np.ndarray:
        u = self.kernel_vector(x)
        return -self.c * np.einsum('ijk,...k->...ij', LEVI_CIVITA, u)

    def grad_u(self, x) -> np.ndarray:
        """[..., k, l] = d_l u^k"""
        x = np.asarray(x, dtype=np.float64)
        s = self._s(x)
        phi = s ** -1.5
        psi = s ** -2.5
        return phi[..., None, None] * EYE - 3.0 * psi[..., None, None] * np.einsum('...k,...l->...kl', x, x)

    def grad2_u(self, x) -> np.ndarray:
        """[..., k, l, m] = d_m d_l u^k"""
        x = np.asarray(x, dtype=np.float64)
        s = self._s(x)
        psi = s ** -2.5
        chi = s ** -3.5
        delta_x = (np.einsum('kl,...m->...klm', EYE, x)
                   + np.einsum('km,...l->...klm', EYE, x)
                   + np.einsum('lm,...k->...klm', EYE, x))
        cube = np.einsum('...k,...l,...m->...klm', x, x, x)
        return -3.0 * psi[..., None, None, None] * delta_x + 15.0 * chi[..., None, None, None] * cube

    def grad_A(self, x) -> np.ndarray:
        """[..., i, j, l] = d_l A^{ij}"""
        return -self.c * np.einsum('ijk,...kl->...ijl', LEVI_CIVITA, self.grad_u(x))

    def grad2_A(self, x) -> np.ndarray:
        """[..., i, j, l, m] = d_m d_l A^{ij}"""
        return -self.c * np.einsum('ijk,...klm->...ijlm', LEVI_CIVITA, self.grad2_u(x))

    def kernel_norm_bounds(self, n: int) -> float:
        """Upper bound of sup_x |grad^n A(x)| in the entrywise-sum norm (n = 0 is A itself)"""
        if n < 0 or n > 3:
            raise UnsupportedOrderError(f"kernel norm bounds available for orders 0..3, got {n}")
        _, peak = radial_maximum(int(n), self.field.mu)
        bound = 2.0 * self.c * peak
        logger.debug(f"kernel bound order {n}: {bound:.6g}")
        return bound
