# services/geometry_service.py
import logging
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, List, Optional

import numpy as np

from config import Config
from exceptions import InvalidInputError
from models import SampledLoop, as_gamma

logger = logging.getLogger(__name__)

HOLDER_MODES = ('exact', 'dyadic', 'auto')


def entrywise_norm(values: np.ndarray, tail_axes: int) -> np.ndarray:
    """Sum of absolute entries over the trailing `tail_axes` axes"""
    if tail_axes == 0:
        return np.abs(values)
    return np.abs(values).sum(axis=tuple(range(-tail_axes, 0)))


def euclidean_norm(values: np.ndarray) -> np.ndarray:
    return np.sqrt(np.einsum('...k,...k->...', values, values))


def fan_out(fn: Callable[[np.ndarray], np.ndarray], points: np.ndarray,
            chunk: Optional[int] = None, threads: int = 1) -> np.ndarray:
    """Evaluate fn on fixed-size chunks of points and concatenate in order.

    Chunk boundaries depend only on `chunk`, so the result does not depend
    on the number of threads.
    """
    chunk = chunk or Config.NUMERICS_CONFIG['target_chunk']
    points = np.asarray(points, dtype=np.float64)
    pieces = [points[i:i + chunk] for i in range(0, points.shape[0], chunk)]
    if not pieces:
        return fn(points)
    if threads <= 1 or len(pieces) == 1:
        results = [fn(piece) for piece in pieces]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(fn, pieces))
    return np.concatenate(results, axis=0)


class GeometryService:
    def __init__(self, numerics: Optional[dict] = None):
        self.numerics = numerics or Config.NUMERICS_CONFIG

    def separations(self, N: int, mode: str = 'exact') -> List[int]:
        """Index separations scanned by the pair estimators"""
        if mode not in HOLDER_MODES:
            raise InvalidInputError(f"Hölder mode must be one of {HOLDER_MODES}, got {mode!r}")
        if mode == 'auto':
            mode = 'exact' if N <= self.numerics['exact_pairs_limit'] else 'dyadic'
        if mode == 'exact':
            if N > self.numerics['exact_pairs_limit']:
                raise InvalidInputError(
                    f"exact pair scan limited to N <= {self.numerics['exact_pairs_limit']}, got N={N}"
                )
            return list(range(1, N + 1))
        result, d = [], 1
        while d <= N:
            result.append(d)
            d *= 2
        return result

    def pair_scan(self, values: np.ndarray, exponent: float, mode: str = 'exact',
                  norm: str = 'euclidean') -> float:
        """max over pairs i<j of |v_j - v_i| / ((j-i)/N)^exponent for grid samples v"""
        values = np.asarray(values, dtype=np.float64)
        if not np.all(np.isfinite(values)):
            raise InvalidInputError('pair scan on non-finite samples')
        N = values.shape[0] - 1
        best = 0.0
        for d in self.separations(N, mode):
            diff = values[d:] - values[:-d]
            if norm == 'euclidean':
                sizes = euclidean_norm(diff)
            else:
                sizes = entrywise_norm(diff, diff.ndim - 1)
            best = max(best, float(sizes.max()) / (d / N) ** exponent)
        return best

    def holder_seminorm(self, loop: SampledLoop, gamma, mode: str = 'exact') -> float:
        """Estimate ||X||_gamma from the sampled pairs of a loop"""
        values = loop.values if isinstance(loop, SampledLoop) else loop
        return self.pair_scan(values, as_gamma(gamma), mode)

    def sup_norm(self, loop: SampledLoop) -> float:
        values = loop.values if isinstance(loop, SampledLoop) else np.asarray(loop, dtype=np.float64)
        if not np.all(np.isfinite(values)):
            raise InvalidInputError('sup norm of non-finite samples')
        return float(euclidean_norm(values).max())
