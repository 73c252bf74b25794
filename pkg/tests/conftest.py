# tests/conftest.py
import os

import numpy as np
import pytest

os.environ.setdefault('FILAMENT_ENV', 'testing')

from models import KernelField, SampledLoop  # noqa: E402
from services.dynamics_service import DynamicsService  # noqa: E402
from services.geometry_service import GeometryService  # noqa: E402
from services.loop_service import LoopService  # noqa: E402
from services.rough_service import RoughService  # noqa: E402

FOUR_PI = 4.0 * np.pi


@pytest.fixture
def unit_field():
    """Gamma = 4 pi, mu = 1: unit kernel prefactor"""
    return KernelField(FOUR_PI, 1.0)


@pytest.fixture
def weak_field():
    return KernelField(1.0, 1.0)


@pytest.fixture
def zero_field():
    return KernelField(0.0, 1.0)


@pytest.fixture
def geometry():
    return GeometryService()


@pytest.fixture
def rough():
    return RoughService()


@pytest.fixture
def loops():
    return LoopService()


@pytest.fixture
def dynamics(unit_field):
    return DynamicsService(unit_field)


@pytest.fixture
def random_walk_loop():
    def build(N=64, seed=0, scale=0.1):
        rng = np.random.default_rng(seed)
        values = np.zeros((N + 1, 3))
        values[1:] = np.cumsum(rng.standard_normal((N, 3)) * scale, axis=0)
        values[1:] -= np.outer(np.arange(1, N + 1) / N, values[-1])
        return SampledLoop(values)
    return build


@pytest.fixture
def random_rotation():
    def build(seed=0):
        rng = np.random.default_rng(seed)
        q, r = np.linalg.qr(rng.standard_normal((3, 3)))
        q = q * np.sign(np.diag(r))
        if np.linalg.det(q) < 0:
            q[:, 0] = -q[:, 0]
        return q
    return build


@pytest.fixture
def write_config(tmp_path):
    def write(lines, name='run.cfg'):
        path = tmp_path / name
        path.write_text('\n'.join(f"{k} = {v}" for k, v in lines.items()) + '\n')
        return str(path)
    return write
