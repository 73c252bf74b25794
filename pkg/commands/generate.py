# commands/generate.py
import logging
import os
from typing import Any, Dict, Optional

from commands.common import base_manifest, output_dir
from config import RunConfig
from exceptions import FilamentError
from services.io_service import IOService
from services.loop_service import LoopService
from services.rough_service import RoughService

logger = logging.getLogger(__name__)


def cmd_generate(run_config: RunConfig, out_dir: Optional[str] = None) -> Dict[str, Any]:
    """Sample the configured loop and write loop CSV, area CSV and manifest"""
    try:
        directory = output_dir(run_config, out_dir)
        spec = run_config.loop_spec()
        rough = LoopService().generate(spec)

        io = IOService()
        io.write_rough_loop(os.path.join(directory, 'loop.csv'), os.path.join(directory, 'area.csv'), rough)

        manifest = base_manifest(run_config, 'generate')
        manifest.update({
            'loop': spec.to_dict(),
            'gamma': rough.gamma,
            'files': {'loop': 'loop.csv', 'area': 'area.csv'},
            'chen_residual': RoughService().chen_residual(rough)
        })
        manifest_path = io.write_manifest(os.path.join(directory, 'manifest.json'), manifest)
        logger.info(f"generated {spec.kind} loop N={spec.N} seed={spec.seed} in {directory}")

        return {
            'status': 'success',
            'manifest': manifest_path,
            'files': {k: os.path.join(directory, v) for k, v in manifest['files'].items()}
        }

    except (FilamentError, OSError) as e:
        logger.error(f"Generate error: {str(e)}")
        return {'status': 'error', 'message': str(e)}
