# commands/converge.py
import dataclasses
import logging
import math
import os
from typing import Any, Dict, List, Optional

import numpy as np

from commands.common import base_manifest, dynamics_for, output_dir
from config import RunConfig
from exceptions import FilamentError, InvalidInputError
from models import ControlledLoop, EvolutionState
from services.io_service import IOService
from services.loop_service import LoopService
from services.rough_service import RoughService

logger = logging.getLogger(__name__)

EXPERIMENTS = ('velocity', 'time')


def empirical_orders(differences: List[float]) -> List[Optional[float]]:
    """log2 ratios of successive level differences"""
    orders = []
    for coarse, fine in zip(differences[:-1], differences[1:]):
        orders.append(math.log2(coarse / fine) if coarse > 0 and fine > 0 else None)
    return orders


def velocity_study(run_config: RunConfig, levels: int) -> List[Dict[str, Any]]:
    """Rough velocity on the circle axis at N, 2N, 4N, ..."""
    loops, rough = LoopService(), RoughService()
    dynamics = dynamics_for(run_config)
    radius = run_config['loop.radius']
    center = np.asarray(run_config['loop.x0'])
    target = center + np.array([0.0, 0.0, 0.5 * radius])

    values = []
    for level in range(levels):
        N = run_config['loop.N'] * 2 ** level
        lifted = rough.piecewise_linear_lift(loops.circle_loop(radius, center, (0.0, 0.0, 1.0), N))
        state = EvolutionState(0.0, ControlledLoop.identity(lifted), np.zeros((N + 1, 3)),
                               np.zeros((N + 1, 3, 3)), 0.0)
        values.append((N, dynamics.velocity_rough(state, target)))
    return _rows('N', values)


def time_study(run_config: RunConfig, levels: int) -> List[Dict[str, Any]]:
    """Final curve of the perturbed circle at dt, dt/2, dt/4, ..."""
    dynamics = dynamics_for(run_config)
    initial = RoughService().piecewise_linear_lift(
        LoopService().perturbed_circle_loop(run_config['loop.radius'], N=run_config['loop.N'],
                                            center=run_config['loop.x0']),
        run_config['evolve.gamma']
    )
    cfg = run_config.evolve_config()
    values = []
    for level in range(levels):
        dt = cfg.dt / 2 ** level
        trajectory = dynamics.evolve(initial, dataclasses.replace(cfg, dt=dt, snapshot_stride=10 ** 9))
        if trajectory.blowup_flag:
            raise InvalidInputError(f"time study blew up at dt={dt}; shorten evolve.t_end")
        values.append((dt, trajectory.final.Y.values.values))
    return _rows('dt', values)


def _rows(label: str, values) -> List[Dict[str, Any]]:
    differences = [float(np.max(np.abs(a[1] - b[1]))) for a, b in zip(values[:-1], values[1:])]
    orders = empirical_orders(differences)
    rows = []
    for level, (parameter, _) in enumerate(values):
        rows.append({
            'level': level,
            label: parameter,
            'difference': differences[level] if level < len(differences) else None,
            'order': orders[level] if level < len(orders) else None
        })
    return rows


def cmd_converge(run_config: RunConfig, out_dir: Optional[str] = None) -> Dict[str, Any]:
    """Rerun a named experiment over refinement levels and report empirical orders"""
    try:
        directory = output_dir(run_config, out_dir)
        experiment = run_config['converge.experiment']
        levels = run_config['converge.levels']
        if levels < 3:
            raise InvalidInputError(f"convergence study needs at least 3 levels, got {levels}")
        if experiment not in EXPERIMENTS:
            raise InvalidInputError(f"unknown experiment {experiment!r}; choose one of {EXPERIMENTS}")

        logger.info(f"convergence study '{experiment}' over {levels} levels")
        rows = velocity_study(run_config, levels) if experiment == 'velocity' else time_study(run_config, levels)
        orders = [row['order'] for row in rows if row['order'] is not None]

        io = IOService()
        table = f"converge_{experiment}.csv"
        io.write_table(os.path.join(directory, table), rows)
        manifest = base_manifest(run_config, 'converge')
        manifest.update({'experiment': experiment, 'levels': levels, 'table': table, 'orders': orders})
        manifest_path = io.write_manifest(os.path.join(directory, 'manifest.json'), manifest)

        return {'status': 'success', 'manifest': manifest_path, 'experiment': experiment, 'orders': orders}

    except (FilamentError, OSError) as e:
        logger.error(f"Converge error: {str(e)}")
        return {'status': 'error', 'message': str(e)}
