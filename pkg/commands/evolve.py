# commands/evolve.py
import logging
import os
from typing import Any, Dict, List, Optional

from commands.common import base_manifest, dynamics_for, output_dir
from config import RunConfig
from exceptions import FilamentError, InsufficientDataError
from models import ControlledLoop, RoughLoop
from services.io_service import IOService
from services.loop_service import LoopService
from services.rough_service import RoughService

logger = logging.getLogger(__name__)


def _snapshot_names(step: int) -> Dict[str, str]:
    stem = os.path.join('snapshots', f"step_{step:06d}")
    return {'loop': f"{stem}_loop.csv", 'derivative': f"{stem}_derivative.csv"}


def _initial_loop(run_config: RunConfig, io: IOService, loop_path: Optional[str],
                  area_path: Optional[str]) -> RoughLoop:
    gamma = run_config['evolve.gamma']
    if loop_path:
        if area_path:
            return io.read_rough_loop(loop_path, area_path, gamma)
        return RoughService().piecewise_linear_lift(io.read_loop(loop_path), gamma)
    return LoopService().generate(run_config.loop_spec())


def cmd_evolve(run_config: RunConfig, out_dir: Optional[str] = None, loop_path: Optional[str] = None,
               area_path: Optional[str] = None, resume: Optional[str] = None) -> Dict[str, Any]:
    """Evolve a loop and write reference files, snapshot CSVs and the run manifest.

    With `resume` the run continues from the last snapshot of an earlier manifest.
    """
    try:
        directory = output_dir(run_config, out_dir)
        cfg = run_config.evolve_config()
        dynamics = dynamics_for(run_config)
        io = IOService()

        previous: Dict[str, Any] = {}
        start, start_step = None, 0
        if resume:
            previous = io.read_manifest(resume)
            base = os.path.dirname(resume)
            initial = io.read_rough_loop(
                os.path.join(base, previous['reference']['loop']),
                os.path.join(base, previous['reference']['area']),
                cfg.gamma
            )
            last = previous['snapshots'][-1]
            Y = io.read_controlled(os.path.join(base, last['loop']), os.path.join(base, last['derivative']), initial)
            start, start_step = dynamics.make_state(Y, float(last['t']), cfg), int(last['step'])
            logger.info(f"resuming {resume} from step {start_step}, t={start.t:.6g}")
        else:
            initial = _initial_loop(run_config, io, loop_path, area_path)

        reference = {'loop': 'reference_loop.csv', 'area': 'reference_area.csv'}
        io.write_rough_loop(os.path.join(directory, reference['loop']),
                            os.path.join(directory, reference['area']), initial)

        if previous.get('blowup_flag'):
            logger.warning(f"{resume} already ended in blow-up; nothing to resume")
            trajectory = None
        else:
            trajectory = dynamics.evolve(initial, cfg, start=start, start_step=start_step)

        snapshots: List[Dict[str, Any]] = []
        if resume:
            base = os.path.dirname(resume)
            for entry in previous['snapshots'][:-1]:
                snapshots.append(dict(entry, **{
                    key: os.path.relpath(os.path.join(base, entry[key]), directory)
                    for key in ('loop', 'derivative')
                }))

        series = {key: list(previous.get(key, [])[:-1]) for key in ('times', 'holder_series', 'remainder_series')}
        if trajectory is not None:
            for state, step in zip(trajectory.snapshots, trajectory.snapshot_steps):
                names = _snapshot_names(step)
                Y: ControlledLoop = state.Y
                io.write_controlled(os.path.join(directory, names['loop']),
                                    os.path.join(directory, names['derivative']), Y)
                snapshots.append({'step': step, 't': state.t, **names})
            series['times'] += trajectory.times
            series['holder_series'] += trajectory.holder_series
            series['remainder_series'] += trajectory.remainder_series
            outcome = trajectory.to_dict()
        else:
            outcome = {key: previous.get(key) for key in
                       ('blowup_flag', 'blowup_reason', 'blowup_node', 'horizon', 'past_horizon')}
            outcome['steps_taken'] = 0

        report = None
        if outcome['blowup_flag']:
            try:
                report = dynamics.blowup_report((series['times'], series['holder_series'])).to_dict()
            except InsufficientDataError as e:
                logger.warning(f"blow-up flagged but not fitted: {e}")

        manifest = base_manifest(run_config, 'evolve')
        manifest.update({
            'reference': reference,
            'snapshots': snapshots,
            'times': series['times'],
            'holder_series': series['holder_series'],
            'remainder_series': series['remainder_series'],
            'blowup_flag': outcome['blowup_flag'],
            'blowup_reason': outcome['blowup_reason'],
            'blowup_node': outcome['blowup_node'],
            'blowup_report': report,
            'horizon': outcome['horizon'],
            'past_horizon': outcome['past_horizon'],
            'steps_taken': outcome['steps_taken'],
            'resumed_from': resume
        })
        manifest_path = io.write_manifest(os.path.join(directory, 'manifest.json'), manifest)

        return {
            'status': 'success',
            'manifest': manifest_path,
            'blowup_flag': bool(outcome['blowup_flag']),
            'snapshots': len(snapshots)
        }

    except (FilamentError, OSError) as e:
        logger.error(f"Evolve error: {str(e)}")
        return {'status': 'error', 'message': str(e)}
