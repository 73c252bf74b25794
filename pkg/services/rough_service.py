# services/rough_service.py
import logging
from typing import Optional

import numpy as np

from config import Config
from exceptions import GridMismatchError, InvalidInputError
from models import (
    AreaBlocks, ControlledLoop, ControlledNorms, RoughLoop, SampledLoop, as_gamma
)
from services.geometry_service import GeometryService, entrywise_norm, euclidean_norm

logger = logging.getLogger(__name__)


class RoughService:
    """Level-2 rough loops: lifts, Chen composition, compensated sums, controlled norms"""

    def __init__(self, numerics: Optional[dict] = None):
        self.numerics = numerics or Config.NUMERICS_CONFIG
        self.geometry = GeometryService(self.numerics)

    # Lifts and Chen composition

    def piecewise_linear_lift(self, loop: SampledLoop, gamma=0.4) -> RoughLoop:
        dX = loop.increments
        blocks = 0.5 * np.einsum('ij,ik->ijk', dX, dX)
        return RoughLoop(loop, AreaBlocks(blocks, loop.grid), gamma)

    def chen_compose(self, area: AreaBlocks, path: SampledLoop, i: int, j: int) -> np.ndarray:
        """Area over [xi_i, xi_j] assembled left to right from the elementary blocks"""
        if area.N != path.N:
            raise GridMismatchError(f"area grid N={area.N} and path grid N={path.N} differ")
        if not (0 <= i <= j <= path.N):
            raise InvalidInputError(f"pair ({i}, {j}) out of range for N={path.N}")
        if i == j:
            return np.zeros((3, 3))
        X = path.values
        offsets = X[i:j] - X[i]
        return area.blocks[i:j].sum(axis=0) + np.einsum('nj,nk->jk', offsets, X[i + 1:j + 1] - X[i:j])

    def prefix_areas(self, area: AreaBlocks, path: SampledLoop) -> np.ndarray:
        """P_j = area over [0, xi_j] for every node j"""
        if area.N != path.N:
            raise GridMismatchError(f"area grid N={area.N} and path grid N={path.N} differ")
        X = path.values
        steps = area.blocks + np.einsum('nj,nk->njk', X[:-1] - X[0], path.increments)
        prefix = np.zeros((path.N + 1, 3, 3))
        np.cumsum(steps, axis=0, out=prefix[1:])
        return prefix

    def pair_areas(self, prefix: np.ndarray, path: SampledLoop, d: int) -> np.ndarray:
        """Areas over [xi_i, xi_{i+d}] for every i, from prefix areas"""
        X = path.values
        return (prefix[d:] - prefix[:-d]
                - np.einsum('nj,nk->njk', X[:-d] - X[0], X[d:] - X[:-d]))

    def chen_residual(self, rough: RoughLoop) -> float:
        """Largest Chen defect over node triples, supplied pair areas against the blocks and among themselves"""
        path, area = rough.path, rough.area
        N = rough.N
        X = path.values
        prefix = self.prefix_areas(area, path)

        residual = 0.0
        for (i, j), supplied in area.pairs.items():
            residual = max(residual, float(np.max(np.abs(supplied - self.chen_compose(area, path, i, j)))))
        for (i, k), whole in area.pairs.items():
            for j in range(i + 1, k):
                if (i, j) in area.pairs and (j, k) in area.pairs:
                    defect = (whole - area.pairs[(i, j)] - area.pairs[(j, k)]
                              - np.outer(X[j] - X[i], X[k] - X[j]))
                    residual = max(residual, float(np.max(np.abs(defect))))

        i, j, k = self._triples(N)
        if i.size:
            def composed(a, b):
                return prefix[b] - prefix[a] - np.einsum('nj,nk->njk', X[a] - X[0], X[b] - X[a])

            defect = (composed(i, k) - composed(i, j) - composed(j, k)
                      - np.einsum('nj,nk->njk', X[j] - X[i], X[k] - X[j]))
            residual = max(residual, float(np.max(np.abs(defect))))
        return residual

    def _triples(self, N: int):
        limit = self.numerics['chen_triples']
        if N < 2:
            empty = np.zeros(0, dtype=int)
            return empty, empty, empty
        total = (N + 1) * N * (N - 1) // 6
        if total <= limit:
            i, j, k = np.array(
                [(a, b, c) for a in range(N + 1) for b in range(a + 1, N + 1) for c in range(b + 1, N + 1)]
            ).T
            return i, j, k
        rng = np.random.Generator(np.random.Philox(N))
        draws = np.sort(rng.integers(0, N + 1, size=(4 * limit, 3)), axis=1)
        draws = draws[(draws[:, 0] < draws[:, 1]) & (draws[:, 1] < draws[:, 2])][:limit]
        return draws[:, 0], draws[:, 1], draws[:, 2]

    # Integration

    def rough_integral(self, Z, Z_prime, Y: ControlledLoop, a: int = 0, b: Optional[int] = None) -> np.ndarray:
        """Compensated sum of Z dY + Z' Y' X2 over the elementary intervals of [a, b].

        Z has shape (N+1, *out, 3) and Z' has shape (N+1, *out, 3, 3); the result has shape out.
        """
        Z = np.asarray(Z, dtype=np.float64)
        Z_prime = np.asarray(Z_prime, dtype=np.float64)
        N = Y.N
        if Z.shape[0] != N + 1 or Z_prime.shape[0] != N + 1:
            raise GridMismatchError(
                f"integrand samples ({Z.shape[0]}, {Z_prime.shape[0]}) do not match grid N={N}"
            )
        if Z_prime.shape != Z.shape + (3,):
            raise InvalidInputError(f"derivative shape {Z_prime.shape} incompatible with integrand {Z.shape}")
        if not (np.all(np.isfinite(Z)) and np.all(np.isfinite(Z_prime))):
            raise InvalidInputError('integrand has non-finite samples')
        b = N if b is None else b
        if not (0 <= a <= b <= N):
            raise InvalidInputError(f"integration range [{a}, {b}] outside grid 0..{N}")

        dY = Y.values.increments[a:b]
        first = np.einsum('i...j,ij->...', Z[a:b], dY)
        second = np.einsum('i...jk,ijl,ikl->...', Z_prime[a:b], Y.derivative[a:b],
                           Y.reference.area.blocks[a:b])
        return first + second

    def lift_controlled(self, Y: ControlledLoop) -> RoughLoop:
        """Area blocks of Y: the compensated sum of (Y - Y_i) dY over each interval, i.e. Y'_i X2_i Y'_i^T"""
        Yp = Y.derivative[:-1]
        blocks = np.einsum('imk,ikl,ijl->imj', Yp, Y.reference.area.blocks, Yp)
        return RoughLoop(Y.values, AreaBlocks(blocks, Y.values.grid), Y.reference.gamma)

    # Norms and distances

    def remainder(self, Y: ControlledLoop, i: int, j: int) -> np.ndarray:
        """R_{ij} = (Y_j - Y_i) - Y'_i (X_j - X_i)"""
        X, V = Y.reference.path.values, Y.values.values
        return (V[j] - V[i]) - Y.derivative[i] @ (X[j] - X[i])

    def remainder_holder(self, Y: ControlledLoop, gamma=None, mode: str = 'auto') -> float:
        gamma = as_gamma(gamma if gamma is not None else Y.reference.gamma)
        X, V, Yp = Y.reference.path.values, Y.values.values, Y.derivative
        N = Y.N
        best = 0.0
        for d in self.geometry.separations(N, mode):
            R = (V[d:] - V[:-d]) - np.einsum('nij,nj->ni', Yp[:-d], X[d:] - X[:-d])
            best = max(best, float(entrywise_norm(R, 1).max()) / (d / N) ** (2.0 * gamma))
        return best

    def controlled_norm(self, Y: ControlledLoop, gamma=None, mode: str = 'auto') -> ControlledNorms:
        gamma = as_gamma(gamma if gamma is not None else Y.reference.gamma)
        return ControlledNorms(
            derivative_sup=float(entrywise_norm(Y.derivative, 2).max()),
            derivative_holder=self.geometry.pair_scan(Y.derivative, gamma, mode, norm='entrywise'),
            remainder_holder=self.remainder_holder(Y, gamma, mode),
            values_sup=self.geometry.sup_norm(Y.values)
        )

    def area_holder_seminorm(self, rough: RoughLoop, gamma=None, mode: str = 'auto') -> float:
        """max over pairs of |X2_{ij}| / |xi_j - xi_i|^{2 gamma}"""
        gamma = as_gamma(gamma if gamma is not None else rough.gamma)
        prefix = self.prefix_areas(rough.area, rough.path)
        N = rough.N
        best = 0.0
        for d in self.geometry.separations(N, mode):
            sizes = entrywise_norm(self.pair_areas(prefix, rough.path, d), 2)
            best = max(best, float(sizes.max()) / (d / N) ** (2.0 * gamma))
        return best

    def rough_distance(self, first: RoughLoop, second: RoughLoop, gamma=None, mode: str = 'auto') -> float:
        """||X - X~||_gamma + ||X2 - X2~||_{2 gamma}"""
        if first.N != second.N:
            raise GridMismatchError(f"rough loops on grids N={first.N} and N={second.N}")
        gamma = as_gamma(gamma if gamma is not None else first.gamma)
        N = first.N
        path_term = self.geometry.pair_scan(first.path.values - second.path.values, gamma, mode)
        p1 = self.prefix_areas(first.area, first.path)
        p2 = self.prefix_areas(second.area, second.path)
        area_term = 0.0
        for d in self.geometry.separations(N, mode):
            diff = self.pair_areas(p1, first.path, d) - self.pair_areas(p2, second.path, d)
            area_term = max(area_term, float(entrywise_norm(diff, 2).max()) / (d / N) ** (2.0 * gamma))
        return path_term + area_term

    def rough_distance_star(self, first: RoughLoop, second: RoughLoop, gamma=None, mode: str = 'auto') -> float:
        sup = float(euclidean_norm(first.path.values - second.path.values).max())
        return self.rough_distance(first, second, gamma, mode) + sup
