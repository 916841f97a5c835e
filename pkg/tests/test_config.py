"""
Tests for config parsing, validation and overrides
"""
import json

import numpy as np
import pytest

from src.core.chain import ChainSpec, FiniteChain
from src.core.config import apply_overrides, config_from_dict, load_config
from src.core.errors import ConfigError, ModelError


def test_defaults_fill_missing_sections():
    config = config_from_dict({'model': {'type': 'mm1', 'alpha': 0.25}})
    assert config.run.n == 10_000
    assert config.estimator.theta_minus == 1.05
    assert config.estimator.theta_plus == 1.0
    assert config.output.precision == 17
    assert config.to_dict()['model']['alpha'] == 0.25


@pytest.mark.parametrize('data, key', [
    ({'model': {'type': 'mm1', 'alpha': 0.25}, 'runs': {}}, 'runs'),
    ({'model': {'type': 'mm1', 'alpha': 0.25, 'beta': 1}}, 'model.beta'),
    ({'model': {'type': 'mm1', 'alpha': 0.25}, 'spectral': {'small': {'state': 0}}}, 'spectral.small.state'),
])
def test_unknown_keys_name_their_path(data, key):
    with pytest.raises(ConfigError, match=f"Unknown key {key}"):
        config_from_dict(data)


@pytest.mark.parametrize('data', [
    {},
    {'model': {'type': 'gg1'}},
    {'model': {'type': 'queue', 'mu': 4.0}},
    {'model': {'type': 'mm1', 'alpha': 0.25}, 'run': {'replications': 0}},
    {'model': {'type': 'mm1', 'alpha': 0.25}, 'run': {'n': True}},
    {'model': {'type': 'mm1', 'alpha': 0.25}, 'spectral': {'a_min': 0.5}},
    {'model': {'type': 'mm1', 'alpha': 0.25}, 'tail': {'side': 'both'}},
    {'model': {'type': 'mm1', 'alpha': 0.25}, 'estimator': {'control': 'exponential'}},
    {'model': {'type': 'mm1', 'alpha': 0.25}, 'observable': {'type': 'tabulated'}},
])
def test_invalid_configs(data):
    with pytest.raises(ConfigError):
        config_from_dict(data)


def test_load_config_errors(tmp_path):
    with pytest.raises(ConfigError):
        load_config(str(tmp_path / 'missing.json'))
    broken = tmp_path / 'broken.json'
    broken.write_text('{"model": ')
    with pytest.raises(ConfigError):
        load_config(str(broken))


def test_load_config_and_overrides(tmp_path):
    path = tmp_path / 'run.json'
    path.write_text(json.dumps({'model': {'type': 'queue', 'mu': 4.0, 'alpha': 3.0, 'kappa': 2.0},
                                'run': {'n': 100, 'master_seed': 3}}))
    config = load_config(str(path))
    updated = apply_overrides(config, seed=9, n=50)
    assert (updated.run.master_seed, updated.run.n) == (9, 50)
    assert (config.run.master_seed, config.run.n) == (3, 100)
    assert apply_overrides(config).run == config.run


def test_build_models():
    queue = config_from_dict({'model': {'type': 'queue', 'mu': 4.0, 'alpha': 3.0, 'kappa': 2.0}}).build_model()
    assert isinstance(queue, ChainSpec)
    assert queue.lattice_step == pytest.approx(3.0)

    atoms = config_from_dict({'model': {'type': 'atoms', 'atoms': [[2, 0.25], [-1, 0.75]]}}).build_model()
    assert atoms.delta == pytest.approx(0.25)

    kernel = config_from_dict({'model': {'type': 'kernel', 'matrix': [[0.5, 0.5], [0.5, 0.5]]}}).build_model()
    assert isinstance(kernel, FiniteChain)


def test_model_preconditions_surface_as_model_errors():
    with pytest.raises(ModelError):
        config_from_dict({'model': {'type': 'atoms', 'atoms': [[1, 0.5], [-1, 0.5]]}}).build_model()
    with pytest.raises(ModelError):
        config_from_dict({'model': {'type': 'mm1', 'alpha': 0.5}}).build_model()


def test_observable_and_control_building():
    config = config_from_dict({'model': {'type': 'mm1', 'alpha': 1 / 3},
                               'observable': {'type': 'identity', 'centered': True},
                               'estimator': {'control': 'exponential', 'beta': 0.1}})
    model = config.build_model()
    F = config.build_observable(model)
    assert F.centered and F.center_value == pytest.approx(1.0)
    assert config.build_lyapunov(model).C == frozenset({0.0})

    toy = config_from_dict({'model': {'type': 'kernel', 'matrix': [[0.5, 0.5], [0.5, 0.5]]}})
    with pytest.raises(ConfigError):
        toy.build_lyapunov(toy.build_model())


def test_tilt_grid_contains_zero():
    config = config_from_dict({'model': {'type': 'mm1', 'alpha': 0.25},
                               'spectral': {'a_min': -4.0, 'a_max': 0.25, 'a_points': 86}})
    grid = config.spectral.a_grid()
    assert np.count_nonzero(grid == 0.0) == 1
    assert np.all(np.abs(grid[grid != 0]) > 1e-3)
    assert grid[0] == -4.0 and grid[-1] == 0.25


def test_small_pair_bounds():
    config = config_from_dict({'model': {'type': 'mm1', 'alpha': 0.25},
                               'spectral': {'small': {'s_state': 3, 'nu_state': 0}}})
    small = config.build_small(10)
    assert small.s[3] == 1.0 and small.nu[0] == 1.0
    with pytest.raises(ConfigError):
        config.build_small(3)
