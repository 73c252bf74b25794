# commands/common.py
import os
from typing import Any, Dict, List, Optional, Tuple

from config import RunConfig
from models import EvolutionState, EvolveConfig, RoughLoop
from services.dynamics_service import DynamicsService
from services.io_service import IOService


def base_manifest(run_config: RunConfig, command: str) -> Dict[str, Any]:
    return {
        'command': command,
        'config': run_config.to_dict(),
        'config_hash': run_config.config_hash(),
        'seed': run_config['run.seed']
    }


def output_dir(run_config: RunConfig, out_dir: Optional[str]) -> str:
    directory = out_dir or run_config['output.dir']
    os.makedirs(directory, exist_ok=True)
    return directory


def dynamics_for(run_config: RunConfig) -> DynamicsService:
    return DynamicsService(run_config.kernel_field(), threads=run_config['run.threads'])


def load_trajectory(manifest_path: str, cfg: EvolveConfig, dynamics: DynamicsService,
                    io: Optional[IOService] = None) -> Tuple[Dict[str, Any], RoughLoop, List[EvolutionState]]:
    """Rebuild the reference loop and every stored snapshot state of an evolve manifest"""
    io = io or IOService()
    manifest = io.read_manifest(manifest_path)
    base = os.path.dirname(manifest_path)
    reference = io.read_rough_loop(
        os.path.join(base, manifest['reference']['loop']),
        os.path.join(base, manifest['reference']['area']),
        cfg.gamma
    )
    states = []
    for entry in manifest['snapshots']:
        Y = io.read_controlled(os.path.join(base, entry['loop']), os.path.join(base, entry['derivative']), reference)
        states.append(dynamics.make_state(Y, float(entry['t']), cfg))
    return manifest, reference, states
