# config.py
import hashlib
import logging
import os
from dataclasses import dataclass, field
from logging.handlers import RotatingFileHandler
from typing import Any, Callable, Dict, Optional, Tuple

import yaml
from colorama import Fore, Style
from colorama import init as colorama_init
from dotenv import load_dotenv

from exceptions import ConfigValidationError
from models import (
    GAMMA_MIN, LOOP_KINDS, REGIMES, SAMPLING_METHODS, SCHEMES,
    EvolveConfig, KernelField, LoopSpec, whole_steps
)

load_dotenv()


class Config:
    """Base configuration class"""

    # Kernel configuration
    KERNEL_CONFIG = {
        'gamma_intensity': 4.0 * 3.141592653589793,
        'mu': 1.0
    }

    # Initial loop configuration
    LOOP_CONFIG = {
        'kind': 'brownian',
        'H': 0.5,
        'x0': (0.0, 0.0, 0.0),
        'N_fine': 4096,
        'N': 128,
        'seed': 0,
        'radius': 1.0,
        'method': 'auto'
    }

    # Time stepping configuration
    EVOLVE_CONFIG = {
        'dt': 1e-2,
        't_end': 0.1,
        'scheme': 'euler',
        'blowup_threshold': 1e6,
        'gamma': 0.4,
        'snapshot_stride': 1,
        'regime': 'rough',
        'remainder_threshold': 1e6
    }

    # Diagnostic suites run by the diagnose command
    DIAGNOSE_CONFIG = {
        'covariation': False,
        'stretching': False,
        'lipschitz': False,
        'mesh': 1.0 / 64.0,
        'ensemble_size': 20,
        't_probe': 0.05
    }

    # Convergence study configuration
    CONVERGE_CONFIG = {
        'experiment': 'velocity',
        'levels': 3
    }

    OUTPUT_CONFIG = {
        'dir': 'runs'
    }

    RUN_CONFIG = {
        'seed': 0,
        'threads': 1
    }

    # Numerical constants shared by the services
    NUMERICS_CONFIG = {
        'exact_pairs_limit': 4096,
        'target_chunk': 64,
        'radial_tolerance': 1e-8,
        'cholesky_limit': 1024,
        'max_factorization_size': 2 ** 14,
        'chen_triples': 2000,
        'horizon_safety': 0.25,
        'remainder_quadrature': 24,
        'blowup_min_points': 5,
        'blowup_residual_threshold': 0.05,
        'csv_float_format': '%.17g'
    }

    LOGGING_CONFIG = {
        'level': os.environ.get('FILAMENT_LOG', 'info'),
        'file_name': 'filament.log',
        'max_bytes': 10240000,
        'backup_count': 10
    }


class DevelopmentConfig(Config):
    """Development configuration"""
    DEBUG = True
    TESTING = False


class ProductionConfig(Config):
    """Production configuration"""
    DEBUG = False
    TESTING = False

    RUN_CONFIG = {
        'seed': 0,
        'threads': os.cpu_count() or 1
    }


class TestingConfig(Config):
    """Testing configuration"""
    DEBUG = True
    TESTING = True

    LOOP_CONFIG = dict(Config.LOOP_CONFIG, N_fine=512, N=64)
    DIAGNOSE_CONFIG = dict(Config.DIAGNOSE_CONFIG, ensemble_size=4)


def get_config():
    """Get configuration class based on environment"""
    env = os.environ.get('FILAMENT_ENV', 'development').lower()

    if env == 'production':
        return ProductionConfig
    elif env == 'testing':
        return TestingConfig
    else:
        return DevelopmentConfig


# Key parsing and validation

def _parse_bool(raw: Any) -> bool:
    if isinstance(raw, bool):
        return raw
    text = str(raw).strip().lower()
    if text in ('1', 'true', 'yes', 'on'):
        return True
    if text in ('0', 'false', 'no', 'off'):
        return False
    raise ValueError(f"not a boolean: {raw!r}")


def _parse_vector(raw: Any) -> Tuple[float, float, float]:
    if isinstance(raw, str):
        parts = [p for p in raw.replace('(', ' ').replace(')', ' ').replace(',', ' ').split() if p]
    else:
        parts = list(raw)
    if len(parts) != 3:
        raise ValueError(f"expected three components, got {raw!r}")
    return tuple(float(p) for p in parts)


def _positive(value: float) -> bool:
    return value > 0


@dataclass(frozen=True)
class KeySpec:
    parse: Callable[[Any], Any]
    check: Callable[[Any], bool]
    admissible: str


KEY_SPECS: Dict[str, KeySpec] = {
    'loop.kind': KeySpec(str, lambda v: v in LOOP_KINDS, f"one of {', '.join(LOOP_KINDS)}"),
    'loop.H': KeySpec(float, lambda v: GAMMA_MIN < v <= 1.0, '(1/3, 1]'),
    'loop.x0': KeySpec(_parse_vector, lambda v: True, 'three comma-separated reals'),
    'loop.N_fine': KeySpec(int, _positive, 'positive integer, multiple of loop.N'),
    'loop.N': KeySpec(int, _positive, 'positive integer dividing loop.N_fine'),
    'loop.seed': KeySpec(int, lambda v: 0 <= v < 2 ** 64, '[0, 2^64)'),
    'loop.radius': KeySpec(float, _positive, '(0, inf)'),
    'loop.method': KeySpec(str, lambda v: v in SAMPLING_METHODS, f"one of {', '.join(SAMPLING_METHODS)}"),
    'kernel.gamma_intensity': KeySpec(float, lambda v: v >= 0, '[0, inf)'),
    'kernel.mu': KeySpec(float, _positive, '(0, inf)'),
    'evolve.dt': KeySpec(float, _positive, '(0, inf)'),
    'evolve.t_end': KeySpec(float, lambda v: v >= 0, '[0, inf)'),
    'evolve.scheme': KeySpec(str, lambda v: v in SCHEMES, f"one of {', '.join(SCHEMES)}"),
    'evolve.blowup_threshold': KeySpec(float, _positive, '(0, inf)'),
    'evolve.gamma': KeySpec(float, lambda v: GAMMA_MIN < v <= 1.0, '(1/3, 1]'),
    'evolve.snapshot_stride': KeySpec(int, lambda v: v >= 1, 'integer >= 1'),
    'evolve.regime': KeySpec(str, lambda v: v in REGIMES, f"one of {', '.join(REGIMES)}"),
    'evolve.remainder_threshold': KeySpec(float, _positive, '(0, inf)'),
    'diagnose.covariation': KeySpec(_parse_bool, lambda v: True, 'true or false'),
    'diagnose.stretching': KeySpec(_parse_bool, lambda v: True, 'true or false'),
    'diagnose.lipschitz': KeySpec(_parse_bool, lambda v: True, 'true or false'),
    'diagnose.mesh': KeySpec(float, lambda v: 0 < v <= 1, '(0, 1]'),
    'diagnose.ensemble_size': KeySpec(int, lambda v: v >= 1, 'integer >= 1'),
    'diagnose.t_probe': KeySpec(float, lambda v: v >= 0, '[0, inf)'),
    'converge.experiment': KeySpec(str, lambda v: v in ('velocity', 'time'), 'velocity or time'),
    'converge.levels': KeySpec(int, lambda v: v >= 3, 'integer >= 3'),
    'output.dir': KeySpec(str, lambda v: len(v) > 0, 'non-empty path'),
    'run.seed': KeySpec(int, lambda v: 0 <= v < 2 ** 64, '[0, 2^64)'),
    'run.threads': KeySpec(int, lambda v: v >= 1, 'integer >= 1')
}

_SECTIONS = {
    'loop': 'LOOP_CONFIG',
    'kernel': 'KERNEL_CONFIG',
    'evolve': 'EVOLVE_CONFIG',
    'diagnose': 'DIAGNOSE_CONFIG',
    'converge': 'CONVERGE_CONFIG',
    'output': 'OUTPUT_CONFIG',
    'run': 'RUN_CONFIG'
}


def default_values(config_class=None) -> Dict[str, Any]:
    """Dotted-key defaults taken from the config class sections"""
    config_class = config_class or get_config()
    values = {}
    for key in KEY_SPECS:
        section, name = key.split('.', 1)
        values[key] = getattr(config_class, _SECTIONS[section])[name]
    return values


def validate_value(key: str, raw: Any) -> Any:
    """Parse and check one dotted key, raising ConfigValidationError on failure"""
    spec = KEY_SPECS.get(key)
    if spec is None:
        raise ConfigValidationError(key, 'unknown configuration key')
    try:
        value = spec.parse(raw)
    except (TypeError, ValueError) as e:
        raise ConfigValidationError(key, f"cannot parse {raw!r} ({e}); admissible: {spec.admissible}")
    if not spec.check(value):
        raise ConfigValidationError(key, f"value {value!r} outside admissible range {spec.admissible}")
    return value


@dataclass(frozen=True)
class RunConfig:
    """Validated union of loop.*, kernel.*, evolve.*, diagnose.*, converge.*, output.* and run.* keys"""
    values: Dict[str, Any] = field(default_factory=dict)

    def __getitem__(self, key: str) -> Any:
        return self.values[key]

    def section(self, name: str) -> Dict[str, Any]:
        prefix = name + '.'
        return {k[len(prefix):]: v for k, v in self.values.items() if k.startswith(prefix)}

    def with_overrides(self, overrides: Dict[str, Any]) -> 'RunConfig':
        merged = dict(self.values)
        for key, raw in overrides.items():
            merged[key] = validate_value(key, raw)
        return RunConfig(_check_cross_keys(merged))

    def canonical_text(self) -> str:
        lines = []
        for key in sorted(self.values):
            value = self.values[key]
            if isinstance(value, tuple):
                value = ','.join(repr(float(v)) for v in value)
            elif isinstance(value, float):
                value = repr(value)
            lines.append(f"{key}={value}")
        return '\n'.join(lines) + '\n'

    def config_hash(self) -> str:
        return hashlib.sha256(self.canonical_text().encode('utf-8')).hexdigest()

    def kernel_field(self) -> KernelField:
        return KernelField(self['kernel.gamma_intensity'], self['kernel.mu'])

    def loop_spec(self) -> LoopSpec:
        loop = self.section('loop')
        return LoopSpec(
            kind=loop['kind'],
            H=loop['H'],
            x0=loop['x0'],
            N_fine=loop['N_fine'],
            N=loop['N'],
            seed=loop['seed'],
            radius=loop['radius'],
            method=loop['method']
        )

    def evolve_config(self) -> EvolveConfig:
        return EvolveConfig(**self.section('evolve'))

    def to_dict(self) -> Dict[str, Any]:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in sorted(self.values.items())}


def _check_cross_keys(values: Dict[str, Any]) -> Dict[str, Any]:
    if values['loop.N_fine'] % values['loop.N'] != 0:
        raise ConfigValidationError(
            'loop.N', f"{values['loop.N']} does not divide loop.N_fine={values['loop.N_fine']}"
        )
    if values['loop.N_fine'] > Config.NUMERICS_CONFIG['max_factorization_size'] \
            and values['loop.method'] == 'cholesky':
        raise ConfigValidationError(
            'loop.N_fine', f"exact factorization is capped at {Config.NUMERICS_CONFIG['max_factorization_size']}"
        )
    horizons = ['evolve.t_end'] + (['diagnose.t_probe'] if values['diagnose.covariation'] else [])
    for key in horizons:
        if not whole_steps(values[key], values['evolve.dt']):
            raise ConfigValidationError(
                key, f"{values[key]} is not a whole number of steps of evolve.dt={values['evolve.dt']}"
            )
    return values


def _flatten(mapping: Dict[str, Any], prefix: str = '') -> Dict[str, Any]:
    flat = {}
    for key, value in mapping.items():
        dotted = f"{prefix}{key}"
        if isinstance(value, dict):
            flat.update(_flatten(value, dotted + '.'))
        else:
            flat[dotted] = value
    return flat


def read_config_file(path: str) -> Dict[str, Any]:
    """Read raw dotted keys from a flat key=value file or a YAML file"""
    with open(path, 'r', encoding='utf-8') as f:
        text = f.read()

    if path.endswith(('.yaml', '.yml')):
        data = yaml.safe_load(text) or {}
        if not isinstance(data, dict):
            raise ConfigValidationError(path, 'YAML config must be a mapping')
        return _flatten(data)

    raw = {}
    for number, line in enumerate(text.splitlines(), start=1):
        line = line.split('#', 1)[0].strip()
        if not line:
            continue
        if '=' not in line:
            raise ConfigValidationError(f"{path}:{number}", f"expected key=value, got {line!r}")
        key, value = (part.strip() for part in line.split('=', 1))
        raw[key] = value
    return raw


def load_run_config(path: Optional[str] = None, overrides: Optional[Dict[str, Any]] = None,
                    config_class=None) -> RunConfig:
    """Build a validated RunConfig from class defaults, an optional file and CLI overrides"""
    values = default_values(config_class)
    raw = read_config_file(path) if path else {}
    raw.update(overrides or {})
    for key, value in raw.items():
        values[key] = validate_value(key, value)
    return RunConfig(_check_cross_keys(values))


# Logging

_LEVELS = {
    'error': logging.ERROR,
    'warning': logging.WARNING,
    'info': logging.INFO,
    'debug': logging.DEBUG
}

_COLOURS = {
    logging.DEBUG: Fore.CYAN,
    logging.INFO: Fore.GREEN,
    logging.WARNING: Fore.YELLOW,
    logging.ERROR: Fore.RED,
    logging.CRITICAL: Fore.RED + Style.BRIGHT
}


class ColourFormatter(logging.Formatter):
    """Console formatter with a coloured level name"""

    def format(self, record: logging.LogRecord) -> str:
        message = super().format(record)
        colour = _COLOURS.get(record.levelno, '')
        return message.replace(record.levelname, f"{colour}{record.levelname}{Style.RESET_ALL}", 1)


def resolve_log_level(name: Optional[str] = None) -> int:
    name = (name or os.environ.get('FILAMENT_LOG') or Config.LOGGING_CONFIG['level']).lower()
    if name not in _LEVELS:
        raise ConfigValidationError('FILAMENT_LOG', f"{name!r} is not one of error, info, debug")
    return _LEVELS[name]


def init_logging(level: Optional[str] = None, log_dir: Optional[str] = None) -> logging.Logger:
    """Configure the root logger: coloured console output plus an optional rotating file"""
    colorama_init()
    root = logging.getLogger()
    root.setLevel(resolve_log_level(level))

    for handler in list(root.handlers):
        if getattr(handler, '_filament', False):
            root.removeHandler(handler)

    console = logging.StreamHandler()
    console.setFormatter(ColourFormatter('%(asctime)s %(levelname)s %(name)s: %(message)s'))
    console._filament = True
    root.addHandler(console)

    if log_dir:
        os.makedirs(log_dir, exist_ok=True)
        file_handler = RotatingFileHandler(
            os.path.join(log_dir, Config.LOGGING_CONFIG['file_name']),
            maxBytes=Config.LOGGING_CONFIG['max_bytes'],
            backupCount=Config.LOGGING_CONFIG['backup_count']
        )
        file_handler.setFormatter(logging.Formatter(
            '%(asctime)s %(levelname)s: %(message)s [in %(pathname)s:%(lineno)d]'
        ))
        file_handler._filament = True
        root.addHandler(file_handler)

    return root
