# models.py
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from exceptions import GridMismatchError, InvalidInputError

GAMMA_MIN = 1.0 / 3.0


def _frozen_array(values, shape_tail: Tuple[int, ...], name: str) -> np.ndarray:
    array = np.array(values, dtype=np.float64, copy=True)
    if array.ndim != 1 + len(shape_tail) or array.shape[1:] != shape_tail:
        raise InvalidInputError(
            f"{name} must have shape (n, {', '.join(map(str, shape_tail))}), got {array.shape}"
        )
    if not np.all(np.isfinite(array)):
        bad = int(np.argwhere(~np.isfinite(array))[0][0])
        raise InvalidInputError(f"{name} has non-finite entries (first at index {bad})")
    array.setflags(write=False)
    return array


@dataclass(frozen=True)
class ParamGrid:
    """Uniform grid xi_i = i/N on [0, 1]"""
    N: int

    def __post_init__(self):
        if int(self.N) != self.N or self.N < 1:
            raise InvalidInputError(f"grid size must be a positive integer, got {self.N}")
        object.__setattr__(self, 'N', int(self.N))

    @property
    def nodes(self) -> np.ndarray:
        return np.arange(self.N + 1, dtype=np.float64) / self.N

    @property
    def spacing(self) -> float:
        return 1.0 / self.N

    def to_dict(self) -> Dict[str, Any]:
        return {'N': self.N}


@dataclass(frozen=True)
class HolderExponent:
    value: float

    def __post_init__(self):
        value = float(self.value)
        if not (GAMMA_MIN < value <= 1.0):
            raise InvalidInputError(f"Hölder exponent must lie in (1/3, 1], got {value}")
        object.__setattr__(self, 'value', value)

    @property
    def is_young(self) -> bool:
        return self.value > 0.5

    def __float__(self) -> float:
        return self.value


def as_gamma(gamma) -> float:
    """Accept a HolderExponent or a plain number and return the validated value"""
    if isinstance(gamma, HolderExponent):
        return gamma.value
    return HolderExponent(gamma).value


@dataclass(frozen=True, eq=False)
class SampledLoop:
    """Closed curve sampled on a uniform grid; values[N] is a copy of values[0]"""
    values: np.ndarray
    grid: Optional[ParamGrid] = None

    def __post_init__(self):
        raw = np.array(self.values, dtype=np.float64, copy=True)
        if raw.ndim != 2 or raw.shape[1] != 3 or raw.shape[0] < 2:
            raise InvalidInputError(f"loop values must have shape (N+1, 3), got {raw.shape}")
        raw[-1] = raw[0]
        values = _frozen_array(raw, (3,), 'loop values')
        grid = self.grid or ParamGrid(values.shape[0] - 1)
        if grid.N != values.shape[0] - 1:
            raise GridMismatchError(f"grid N={grid.N} does not match {values.shape[0]} samples")
        object.__setattr__(self, 'values', values)
        object.__setattr__(self, 'grid', grid)

    @property
    def N(self) -> int:
        return self.grid.N

    @property
    def increments(self) -> np.ndarray:
        return np.diff(self.values, axis=0)

    def translated(self, offset) -> 'SampledLoop':
        return SampledLoop(self.values + np.asarray(offset, dtype=np.float64))

    def transformed(self, matrix, offset=None) -> 'SampledLoop':
        moved = self.values @ np.asarray(matrix, dtype=np.float64).T
        if offset is not None:
            moved = moved + np.asarray(offset, dtype=np.float64)
        return SampledLoop(moved)

    def to_dict(self) -> Dict[str, Any]:
        return {'N': self.N, 'values': self.values.tolist()}


@dataclass(frozen=True, eq=False)
class AreaBlocks:
    """Per-interval level-2 areas; optional explicitly supplied pair areas keyed by (i, j)"""
    blocks: np.ndarray
    grid: Optional[ParamGrid] = None
    pairs: Dict[Tuple[int, int], np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        blocks = _frozen_array(self.blocks, (3, 3), 'area blocks')
        grid = self.grid or ParamGrid(blocks.shape[0])
        if grid.N != blocks.shape[0]:
            raise GridMismatchError(f"grid N={grid.N} does not match {blocks.shape[0]} blocks")
        pairs = {}
        for (i, j), value in dict(self.pairs).items():
            if not (0 <= i <= j <= grid.N):
                raise InvalidInputError(f"pair area index ({i}, {j}) out of range for N={grid.N}")
            pairs[(int(i), int(j))] = _frozen_array(np.asarray(value)[None], (3, 3), 'pair area')[0]
        object.__setattr__(self, 'blocks', blocks)
        object.__setattr__(self, 'grid', grid)
        object.__setattr__(self, 'pairs', pairs)

    @property
    def N(self) -> int:
        return self.grid.N


@dataclass(frozen=True, eq=False)
class RoughLoop:
    path: SampledLoop
    area: AreaBlocks
    gamma: float = 0.4

    def __post_init__(self):
        if self.path.N != self.area.N:
            raise GridMismatchError(
                f"path grid N={self.path.N} and area grid N={self.area.N} differ"
            )
        object.__setattr__(self, 'gamma', as_gamma(self.gamma))

    @property
    def N(self) -> int:
        return self.path.N

    def to_dict(self) -> Dict[str, Any]:
        return {'N': self.N, 'gamma': self.gamma, 'pairs': len(self.area.pairs)}


@dataclass(frozen=True, eq=False)
class ControlledLoop:
    """Loop Y with Gubinelli derivative Y' relative to the reference rough loop X"""
    reference: RoughLoop
    values: SampledLoop
    derivative: np.ndarray

    def __post_init__(self):
        derivative = _frozen_array(self.derivative, (3, 3), 'derivative')
        if self.values.N != self.reference.N or derivative.shape[0] != self.values.N + 1:
            raise GridMismatchError(
                f"controlled loop grid (N={self.values.N}, {derivative.shape[0]} derivative samples) "
                f"does not match reference N={self.reference.N}"
            )
        object.__setattr__(self, 'derivative', derivative)

    @classmethod
    def identity(cls, reference: RoughLoop) -> 'ControlledLoop':
        eye = np.broadcast_to(np.eye(3), (reference.N + 1, 3, 3))
        return cls(reference, reference.path, eye)

    @property
    def N(self) -> int:
        return self.values.N


@dataclass(frozen=True)
class ControlledNorms:
    derivative_sup: float
    derivative_holder: float
    remainder_holder: float
    values_sup: float

    @property
    def d_norm(self) -> float:
        return self.derivative_holder + self.remainder_holder + self.derivative_sup

    @property
    def d_norm_star(self) -> float:
        return self.d_norm + self.values_sup

    def to_dict(self) -> Dict[str, Any]:
        return {
            'derivative_sup': self.derivative_sup,
            'derivative_holder': self.derivative_holder,
            'remainder_holder': self.remainder_holder,
            'values_sup': self.values_sup,
            'd_norm': self.d_norm,
            'd_norm_star': self.d_norm_star
        }


@dataclass(frozen=True)
class KernelField:
    """Regularized Biot-Savart kernel parameters (circulation, regularization length)"""
    gamma_intensity: float
    mu: float

    def __post_init__(self):
        gamma_intensity, mu = float(self.gamma_intensity), float(self.mu)
        # zero circulation is kept: it is the trivial flow used as a control
        if not np.isfinite(gamma_intensity) or gamma_intensity < 0.0:
            raise InvalidInputError(f"circulation must be finite and >= 0, got {gamma_intensity}")
        if not np.isfinite(mu) or mu <= 0.0:
            raise InvalidInputError(f"regularization length mu must be > 0, got {mu}")
        object.__setattr__(self, 'gamma_intensity', gamma_intensity)
        object.__setattr__(self, 'mu', mu)

    @property
    def prefactor(self) -> float:
        return self.gamma_intensity / (4.0 * np.pi)

    def to_dict(self) -> Dict[str, Any]:
        return {'gamma_intensity': self.gamma_intensity, 'mu': self.mu}


LOOP_KINDS = ('brownian', 'fractional', 'circle')
SAMPLING_METHODS = ('auto', 'cholesky', 'circulant')


@dataclass(frozen=True)
class LoopSpec:
    kind: str = 'brownian'
    H: float = 0.5
    x0: Tuple[float, float, float] = (0.0, 0.0, 0.0)
    N_fine: int = 4096
    N: int = 256
    seed: int = 0
    radius: float = 1.0
    method: str = 'auto'

    def __post_init__(self):
        if self.kind not in LOOP_KINDS:
            raise InvalidInputError(f"loop kind must be one of {LOOP_KINDS}, got {self.kind!r}")
        if self.method not in SAMPLING_METHODS:
            raise InvalidInputError(f"sampling method must be one of {SAMPLING_METHODS}")
        H = 0.5 if self.kind == 'brownian' else float(self.H)
        if not (GAMMA_MIN < H <= 1.0):
            raise InvalidInputError(f"Hurst index must lie in (1/3, 1], got {H}")
        if self.N < 1 or self.N_fine < 1 or self.N_fine % self.N != 0:
            raise InvalidInputError(f"N={self.N} must be positive and divide N_fine={self.N_fine}")
        if not (0 <= int(self.seed) < 2 ** 64):
            raise InvalidInputError(f"seed must be an unsigned 64-bit integer, got {self.seed}")
        if self.radius <= 0:
            raise InvalidInputError(f"radius must be positive, got {self.radius}")
        object.__setattr__(self, 'H', H)
        object.__setattr__(self, 'x0', tuple(float(v) for v in self.x0))
        object.__setattr__(self, 'seed', int(self.seed))

    def to_dict(self) -> Dict[str, Any]:
        return {
            'kind': self.kind,
            'H': self.H,
            'x0': list(self.x0),
            'N_fine': self.N_fine,
            'N': self.N,
            'seed': self.seed,
            'radius': self.radius,
            'method': self.method
        }


SCHEMES = ('euler', 'heun')
REGIMES = ('rough', 'young')
STEP_TOLERANCE = 1e-9


def whole_steps(t_end: float, dt: float) -> bool:
    """True when t_end is an integer number of steps of size dt"""
    ratio = t_end / dt
    return abs(ratio - round(ratio)) <= STEP_TOLERANCE * max(1.0, ratio)


@dataclass(frozen=True)
class EvolveConfig:
    dt: float = 1e-2
    t_end: float = 0.1
    scheme: str = 'euler'
    blowup_threshold: float = 1e6
    gamma: float = 0.4
    snapshot_stride: int = 1
    regime: str = 'rough'
    remainder_threshold: float = 1e6

    def __post_init__(self):
        if not (self.dt > 0 and np.isfinite(self.dt)):
            raise InvalidInputError(f"time step must be positive, got {self.dt}")
        if not (self.t_end >= 0 and np.isfinite(self.t_end)):
            raise InvalidInputError(f"horizon must be finite and >= 0, got {self.t_end}")
        if not whole_steps(self.t_end, self.dt):
            raise InvalidInputError(f"horizon {self.t_end} is not a whole number of steps of {self.dt}")
        if self.scheme not in SCHEMES:
            raise InvalidInputError(f"scheme must be one of {SCHEMES}, got {self.scheme!r}")
        if self.regime not in REGIMES:
            raise InvalidInputError(f"regime must be one of {REGIMES}, got {self.regime!r}")
        if int(self.snapshot_stride) < 1:
            raise InvalidInputError(f"snapshot stride must be >= 1, got {self.snapshot_stride}")
        object.__setattr__(self, 'gamma', as_gamma(self.gamma))
        object.__setattr__(self, 'snapshot_stride', int(self.snapshot_stride))

    @property
    def n_steps(self) -> int:
        return int(round(self.t_end / self.dt))

    def to_dict(self) -> Dict[str, Any]:
        return {
            'dt': self.dt,
            't_end': self.t_end,
            'scheme': self.scheme,
            'blowup_threshold': self.blowup_threshold,
            'gamma': self.gamma,
            'snapshot_stride': self.snapshot_stride,
            'regime': self.regime,
            'remainder_threshold': self.remainder_threshold
        }


@dataclass(frozen=True, eq=False)
class EvolutionState:
    """Time t, controlled loop (Y, Y') and the caches refreshed after every step"""
    t: float
    Y: ControlledLoop
    velocity: np.ndarray
    gradient: np.ndarray
    holder: float
    remainder_holder: float = 0.0

    @property
    def reference(self) -> RoughLoop:
        return self.Y.reference

    def to_dict(self) -> Dict[str, Any]:
        return {
            't': self.t,
            'holder': self.holder,
            'remainder_holder': self.remainder_holder,
            'N': self.Y.N
        }


@dataclass
class Trajectory:
    snapshots: List[EvolutionState] = field(default_factory=list)
    snapshot_steps: List[int] = field(default_factory=list)
    times: List[float] = field(default_factory=list)
    holder_series: List[float] = field(default_factory=list)
    remainder_series: List[float] = field(default_factory=list)
    blowup_flag: bool = False
    blowup_reason: Optional[str] = None
    blowup_node: Optional[int] = None
    steps_taken: int = 0
    horizon: Optional[float] = None
    past_horizon: bool = False

    @property
    def final(self) -> EvolutionState:
        return self.snapshots[-1]

    def to_dict(self) -> Dict[str, Any]:
        return {
            'times': list(self.times),
            'snapshot_steps': list(self.snapshot_steps),
            'holder_series': list(self.holder_series),
            'remainder_series': list(self.remainder_series),
            'blowup_flag': self.blowup_flag,
            'blowup_reason': self.blowup_reason,
            'blowup_node': self.blowup_node,
            'steps_taken': self.steps_taken,
            'horizon': self.horizon,
            'past_horizon': self.past_horizon
        }


@dataclass(frozen=True)
class BlowupReport:
    blowup: bool
    t_hat: Optional[float]
    C: Optional[float]
    residual: float
    consistent: bool
    tail_points: int

    def to_dict(self) -> Dict[str, Any]:
        return {
            'blowup': self.blowup,
            't_hat': self.t_hat,
            'C': self.C,
            'residual': self.residual,
            'consistent': self.consistent,
            'tail_points': self.tail_points
        }


@dataclass(frozen=True, eq=False)
class CovariationSeries:
    values: np.ndarray
    mesh: float
    grid: Optional[ParamGrid] = None

    def __post_init__(self):
        values = _frozen_array(self.values, (3, 3), 'covariation values')
        grid = self.grid or ParamGrid(values.shape[0] - 1)
        if grid.N != values.shape[0] - 1:
            raise GridMismatchError(f"grid N={grid.N} does not match {values.shape[0]} samples")
        object.__setattr__(self, 'values', values)
        object.__setattr__(self, 'grid', grid)

    @property
    def increments(self) -> np.ndarray:
        return np.diff(self.values, axis=0)

    def at(self, xi: float) -> np.ndarray:
        index = int(round(xi * self.grid.N))
        return self.values[index]


@dataclass(frozen=True, eq=False)
class StretchState:
    """Per-node split of H = grad V into S (symmetric) and T (antisymmetric), frame Q, stretch E.

    E is the stepwise product of exponentials of S~ = Q S Q^T, M the exponential of its time integral.
    """
    t: float
    S: np.ndarray
    T: np.ndarray
    Q: np.ndarray
    E: np.ndarray
    M: np.ndarray

    @property
    def orthogonality_defect(self) -> float:
        eye = np.eye(3)
        return float(np.max(np.abs(np.einsum('nij,nkj->nik', self.Q, self.Q) - eye)))


@dataclass
class StretchReport:
    states: List[StretchState]
    reconstruction_residual: List[float]
    product_residual: List[float]

    @property
    def max_orthogonality_defect(self) -> float:
        return max(state.orthogonality_defect for state in self.states)

    def to_dict(self) -> Dict[str, Any]:
        return {
            'times': [state.t for state in self.states],
            'orthogonality_defect': [state.orthogonality_defect for state in self.states],
            'reconstruction_residual': list(self.reconstruction_residual),
            'product_residual': list(self.product_residual)
        }


@dataclass(frozen=True)
class LipschitzRow:
    delta: float
    numerator: float
    denominator: float
    ratio: Optional[float]
    exact_match: bool
    blown_up: bool

    def to_dict(self) -> Dict[str, Any]:
        return {
            'delta': self.delta,
            'numerator': self.numerator,
            'denominator': self.denominator,
            'ratio': self.ratio,
            'exact_match': self.exact_match,
            'blown_up': self.blown_up
        }
