# commands/diagnose.py
import dataclasses
import logging
import os
from typing import Any, Dict, List, Optional

import numpy as np

from commands.common import base_manifest, dynamics_for, load_trajectory, output_dir
from config import RunConfig
from exceptions import FilamentError
from services.diagnostics_service import DiagnosticsService
from services.io_service import IOService
from services.loop_service import LoopService

logger = logging.getLogger(__name__)

XI_POINTS = (0.25, 0.5, 0.75)
LIPSCHITZ_DELTAS = (1e-2, 1e-3, 1e-4)


def _flatten(prefix: str, matrix: np.ndarray) -> Dict[str, float]:
    return {f"{prefix}_{r + 1}{c + 1}": float(matrix[r, c]) for r in range(3) for c in range(3)}


def run_covariation_suite(run_config: RunConfig, diagnostics: DiagnosticsService) -> Dict[str, Any]:
    """Ensemble covariation at t = 0 against Id xi and, for t_probe > 0, estimate against transport"""
    spec = run_config.loop_spec()
    mesh = run_config['diagnose.mesh']
    t_probe = run_config['diagnose.t_probe']
    size = run_config['diagnose.ensemble_size']
    loops = LoopService()
    dynamics = dynamics_for(run_config)
    cfg = dataclasses.replace(run_config.evolve_config(), t_end=t_probe, snapshot_stride=10 ** 9)

    initial_sum = np.zeros((len(XI_POINTS), 3, 3))
    evolved_sum = np.zeros_like(initial_sum)
    predicted_sum = np.zeros_like(initial_sum)
    for k in range(size):
        member = loops.generate(dataclasses.replace(spec, seed=run_config['run.seed'] + k))
        base = diagnostics.covariation_estimate(member.path, mesh)
        initial_sum += np.array([base.at(xi) for xi in XI_POINTS])
        if t_probe > 0:
            final = dynamics.evolve(member, cfg).final
            estimate = diagnostics.covariation_estimate(final.Y.values, mesh)
            predicted = diagnostics.covariation_predicted(final.Y, base)
            evolved_sum += np.array([estimate.at(xi) for xi in XI_POINTS])
            predicted_sum += np.array([predicted.at(xi) for xi in XI_POINTS])
        logger.debug(f"covariation member {k + 1}/{size} done")

    rows = []
    for p, xi in enumerate(XI_POINTS):
        row = {'xi': xi, **_flatten('initial', initial_sum[p] / size)}
        if t_probe > 0:
            row.update(_flatten('estimate', evolved_sum[p] / size))
            row.update(_flatten('predicted', predicted_sum[p] / size))
        rows.append(row)

    initial_mean = initial_sum / size
    summary = {
        'ensemble_size': size,
        'mesh': mesh,
        'max_relative_deviation_from_identity': float(max(
            np.max(np.abs(initial_mean[p] - xi * np.eye(3))) / xi for p, xi in enumerate(XI_POINTS)
        ))
    }
    if t_probe > 0:
        scale = np.array([np.trace(m) / 3.0 for m in predicted_sum / size])
        summary['t_probe'] = t_probe
        summary['max_transport_deviation'] = float(max(
            np.max(np.abs(evolved_sum[p] - predicted_sum[p]) / size) / scale[p] for p in range(len(XI_POINTS))
        ))
    return {'rows': rows, 'summary': summary}


def run_stretching_suite(run_config: RunConfig, diagnostics: DiagnosticsService,
                         trajectory: Optional[str]) -> Dict[str, Any]:
    cfg = run_config.evolve_config()
    dynamics = dynamics_for(run_config)
    if trajectory:
        _, _, history = load_trajectory(trajectory, cfg, dynamics)
    else:
        initial = LoopService().generate(run_config.loop_spec())
        history = dynamics.evolve(initial, dataclasses.replace(cfg, snapshot_stride=1)).snapshots
    report = diagnostics.stretching_decomposition(history, cfg.scheme)
    rows = [
        {'t': state.t, 'orthogonality_defect': state.orthogonality_defect,
         'reconstruction_residual': residual, 'product_residual': product}
        for state, residual, product in zip(report.states, report.reconstruction_residual, report.product_residual)
    ]
    return {'rows': rows, 'summary': {
        'max_orthogonality_defect': report.max_orthogonality_defect,
        'max_reconstruction_residual': float(max(report.reconstruction_residual)),
        'max_product_residual': float(max(report.product_residual)),
        'frame_is_identity': bool(all(np.allclose(s.Q, np.eye(3), atol=1e-14) for s in report.states))
    }}


def run_lipschitz_suite(run_config: RunConfig, diagnostics: DiagnosticsService) -> Dict[str, Any]:
    cfg = run_config.evolve_config()
    initial = LoopService().generate(run_config.loop_spec())
    rows = diagnostics.lipschitz_experiment(initial, LIPSCHITZ_DELTAS, cfg, dynamics_for(run_config))
    ratios = [row.ratio for row in rows if row.ratio is not None and row.ratio > 0]
    return {'rows': [row.to_dict() for row in rows], 'summary': {
        'spread': float(max(ratios) / min(ratios)) if ratios else None,
        'blown_up': any(row.blown_up for row in rows)
    }}


def cmd_diagnose(run_config: RunConfig, out_dir: Optional[str] = None,
                 trajectory: Optional[str] = None) -> Dict[str, Any]:
    """Run the covariation, stretching and Lipschitz suites selected in the config"""
    try:
        directory = output_dir(run_config, out_dir)
        diagnostics = DiagnosticsService()
        io = IOService()

        suites: List[str] = [name for name in ('covariation', 'stretching', 'lipschitz')
                             if run_config[f"diagnose.{name}"]]
        manifest = base_manifest(run_config, 'diagnose')
        manifest.update({'suites': suites, 'trajectory': trajectory, 'results': {}})

        for name in suites:
            logger.info(f"running {name} diagnostics")
            if name == 'covariation':
                result = run_covariation_suite(run_config, diagnostics)
            elif name == 'stretching':
                result = run_stretching_suite(run_config, diagnostics, trajectory)
            else:
                result = run_lipschitz_suite(run_config, diagnostics)
            table = f"{name}.csv"
            io.write_table(os.path.join(directory, table), result['rows'])
            manifest['results'][name] = {'table': table, **result['summary']}

        manifest_path = io.write_manifest(os.path.join(directory, 'manifest.json'), manifest)
        return {'status': 'success', 'manifest': manifest_path, 'suites': suites, 'results': manifest['results']}

    except (FilamentError, OSError) as e:
        logger.error(f"Diagnose error: {str(e)}")
        return {'status': 'error', 'message': str(e)}
