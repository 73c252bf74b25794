# services/io_service.py
import json
import logging
import math
import os
from typing import Any, Dict, List, Optional

import numpy as np
import pandas as pd

from config import Config
from exceptions import InvalidInputError
from models import AreaBlocks, ControlledLoop, ParamGrid, RoughLoop, SampledLoop

logger = logging.getLogger(__name__)

LOOP_COLUMNS = ['xi', 'x', 'y', 'z']
AREA_COLUMNS = ['i'] + [f"b{r}{c}" for r in range(1, 4) for c in range(1, 4)]
DERIVATIVE_COLUMNS = ['i'] + [f"d{r}{c}" for r in range(1, 4) for c in range(1, 4)]


def _json_safe(value: Any) -> Any:
    if isinstance(value, dict):
        return {str(k): _json_safe(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_json_safe(v) for v in value]
    if isinstance(value, np.ndarray):
        return _json_safe(value.tolist())
    if isinstance(value, (np.floating, float)):
        value = float(value)
        return value if math.isfinite(value) else None
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, np.bool_):
        return bool(value)
    return value


class IOService:
    """CSV tables for loops, areas and derivatives; JSON manifests"""

    def __init__(self, float_format: Optional[str] = None):
        self.float_format = float_format or Config.NUMERICS_CONFIG['csv_float_format']

    def _write_frame(self, df: pd.DataFrame, path: str) -> str:
        directory = os.path.dirname(path)
        if directory:
            os.makedirs(directory, exist_ok=True)
        df.to_csv(path, index=False, float_format=self.float_format, lineterminator='\n')
        logger.debug(f"wrote {len(df)} rows to {path}")
        return path

    def _read_frame(self, path: str, columns: List[str]) -> pd.DataFrame:
        if not os.path.exists(path):
            raise FileNotFoundError(f"input file not found: {path}")
        df = pd.read_csv(path, dtype=np.float64, float_precision='round_trip')
        if list(df.columns) != columns:
            raise InvalidInputError(f"{path}: expected header {','.join(columns)}, got {','.join(df.columns)}")
        if df.isnull().values.any():
            raise InvalidInputError(f"{path}: empty or non-numeric cells")
        return df

    # Loops

    def write_loop(self, path: str, loop: SampledLoop) -> str:
        df = pd.DataFrame(loop.values, columns=LOOP_COLUMNS[1:])
        df.insert(0, 'xi', loop.grid.nodes)
        return self._write_frame(df, path)

    def read_loop(self, path: str) -> SampledLoop:
        df = self._read_frame(path, LOOP_COLUMNS)
        values = df[LOOP_COLUMNS[1:]].to_numpy()
        if values.shape[0] < 2:
            raise InvalidInputError(f"{path}: a loop needs at least two rows")
        if not np.array_equal(values[0], values[-1]):
            raise InvalidInputError(f"{path}: first and last rows differ, the curve is not closed")
        return SampledLoop(values)

    # Areas and derivatives

    def write_area(self, path: str, area: AreaBlocks) -> str:
        df = pd.DataFrame(area.blocks.reshape(area.N, 9), columns=AREA_COLUMNS[1:])
        df.insert(0, 'i', np.arange(area.N))
        return self._write_frame(df, path)

    def read_area(self, path: str, grid: Optional[ParamGrid] = None) -> AreaBlocks:
        df = self._read_frame(path, AREA_COLUMNS)
        blocks = df[AREA_COLUMNS[1:]].to_numpy().reshape(-1, 3, 3)
        return AreaBlocks(blocks, grid)

    def write_derivative(self, path: str, derivative: np.ndarray) -> str:
        df = pd.DataFrame(np.asarray(derivative).reshape(-1, 9), columns=DERIVATIVE_COLUMNS[1:])
        df.insert(0, 'i', np.arange(df.shape[0]))
        return self._write_frame(df, path)

    def read_derivative(self, path: str) -> np.ndarray:
        df = self._read_frame(path, DERIVATIVE_COLUMNS)
        return df[DERIVATIVE_COLUMNS[1:]].to_numpy().reshape(-1, 3, 3)

    def write_rough_loop(self, loop_path: str, area_path: str, rough: RoughLoop) -> Dict[str, str]:
        return {'loop': self.write_loop(loop_path, rough.path), 'area': self.write_area(area_path, rough.area)}

    def read_rough_loop(self, loop_path: str, area_path: str, gamma: float = 0.4) -> RoughLoop:
        path = self.read_loop(loop_path)
        return RoughLoop(path, self.read_area(area_path, path.grid), gamma)

    def write_controlled(self, loop_path: str, derivative_path: str, Y: ControlledLoop) -> Dict[str, str]:
        return {
            'loop': self.write_loop(loop_path, Y.values),
            'derivative': self.write_derivative(derivative_path, Y.derivative)
        }

    def read_controlled(self, loop_path: str, derivative_path: str, reference: RoughLoop) -> ControlledLoop:
        return ControlledLoop(reference, self.read_loop(loop_path), self.read_derivative(derivative_path))

    # Tables and manifests

    def write_table(self, path: str, rows: List[Dict[str, Any]]) -> str:
        return self._write_frame(pd.DataFrame(rows), path)

    def read_table(self, path: str) -> pd.DataFrame:
        if not os.path.exists(path):
            raise FileNotFoundError(f"input file not found: {path}")
        return pd.read_csv(path, float_precision='round_trip')

    def write_manifest(self, path: str, manifest: Dict[str, Any]) -> str:
        directory = os.path.dirname(path)
        if directory:
            os.makedirs(directory, exist_ok=True)
        with open(path, 'w', encoding='utf-8') as f:
            json.dump(_json_safe(manifest), f, indent=2, sort_keys=True)
            f.write('\n')
        logger.info(f"manifest written: {path}")
        return path

    def read_manifest(self, path: str) -> Dict[str, Any]:
        if not os.path.exists(path):
            raise FileNotFoundError(f"manifest not found: {path}")
        with open(path, 'r', encoding='utf-8') as f:
            try:
                return json.load(f)
            except json.JSONDecodeError as e:
                raise InvalidInputError(f"{path}: malformed manifest ({e})")
