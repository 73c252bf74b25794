# tests/test_config.py
import logging

import pytest

from config import (
    Config, ProductionConfig, TestingConfig, get_config, init_logging,
    load_run_config, resolve_log_level, validate_value
)
from exceptions import ConfigValidationError
from models import EvolveConfig, KernelField, LoopSpec


def test_defaults_validate():
    run = load_run_config(config_class=Config)
    assert run['loop.kind'] == 'brownian'
    assert run['kernel.mu'] == 1.0
    assert isinstance(run.kernel_field(), KernelField)
    assert isinstance(run.loop_spec(), LoopSpec)
    assert isinstance(run.evolve_config(), EvolveConfig)


def test_get_config_follows_environment(monkeypatch):
    monkeypatch.setenv('FILAMENT_ENV', 'production')
    assert get_config() is ProductionConfig
    monkeypatch.setenv('FILAMENT_ENV', 'testing')
    assert get_config() is TestingConfig


def test_flat_file_with_comments(write_config):
    path = write_config({'loop.kind': 'circle  # deterministic', 'loop.N': 32, 'loop.N_fine': 64,
                         'evolve.scheme': 'heun', 'loop.x0': '1, 2, 3'})
    run = load_run_config(path)
    assert run['loop.kind'] == 'circle'
    assert run['loop.N'] == 32
    assert run['evolve.scheme'] == 'heun'
    assert run['loop.x0'] == (1.0, 2.0, 3.0)


def test_yaml_file_is_flattened(tmp_path):
    path = tmp_path / 'run.yaml'
    path.write_text("loop:\n  kind: fractional\n  H: 0.7\n  N: 16\n  N_fine: 256\n"
                    "evolve:\n  dt: 0.005\n  regime: young\n")
    run = load_run_config(str(path))
    assert run['loop.H'] == 0.7
    assert run['evolve.dt'] == 0.005
    assert run['evolve.regime'] == 'young'


def test_rejected_hurst_names_key_and_range():
    with pytest.raises(ConfigValidationError) as excinfo:
        load_run_config(overrides={'loop.H': '0.2'})
    assert excinfo.value.key == 'loop.H'
    assert 'loop.H' in str(excinfo.value)
    assert '(1/3, 1]' in str(excinfo.value)


def test_unknown_key_rejected():
    with pytest.raises(ConfigValidationError) as excinfo:
        validate_value('loop.colour', 'red')
    assert excinfo.value.key == 'loop.colour'


def test_unparseable_value_rejected():
    with pytest.raises(ConfigValidationError, match='evolve.dt'):
        validate_value('evolve.dt', 'fast')


def test_grid_sizes_must_nest():
    with pytest.raises(ConfigValidationError) as excinfo:
        load_run_config(overrides={'loop.N': 100, 'loop.N_fine': 512})
    assert excinfo.value.key == 'loop.N'


@pytest.mark.parametrize('key', ['evolve.t_end', 'diagnose.t_probe'])
def test_horizon_must_be_whole_steps(key):
    with pytest.raises(ConfigValidationError) as excinfo:
        load_run_config(overrides={'diagnose.covariation': True, 'evolve.dt': 0.02, key: 0.05})
    assert excinfo.value.key == key
    assert load_run_config(overrides={'diagnose.covariation': True, 'evolve.dt': 0.025, key: 0.05})[key] == 0.05


def test_probe_time_ignored_without_covariation_suite():
    assert load_run_config(overrides={'evolve.dt': 0.02, 'diagnose.t_probe': 0.05})['evolve.dt'] == 0.02


def test_malformed_line_rejected(tmp_path):
    path = tmp_path / 'bad.cfg'
    path.write_text('loop.kind circle\n')
    with pytest.raises(ConfigValidationError):
        load_run_config(str(path))


def test_config_hash_tracks_values():
    run = load_run_config()
    same = load_run_config()
    changed = run.with_overrides({'kernel.mu': 0.5})
    assert run.config_hash() == same.config_hash()
    assert run.config_hash() != changed.config_hash()
    assert changed['kernel.mu'] == 0.5


def test_to_dict_is_json_friendly():
    data = load_run_config().to_dict()
    assert data['loop.x0'] == [0.0, 0.0, 0.0]
    assert list(data) == sorted(data)


def test_log_level_resolution(monkeypatch):
    assert resolve_log_level('debug') == logging.DEBUG
    monkeypatch.setenv('FILAMENT_LOG', 'error')
    assert resolve_log_level() == logging.ERROR
    with pytest.raises(ConfigValidationError):
        resolve_log_level('chatty')


def test_init_logging_installs_handlers_once(tmp_path):
    root = init_logging('info', str(tmp_path))
    init_logging('info', str(tmp_path))
    ours = [h for h in root.handlers if getattr(h, '_filament', False)]
    assert len(ours) == 2
    assert (tmp_path / Config.LOGGING_CONFIG['file_name']).exists()
    for handler in ours:
        handler.close()
    init_logging('info')
