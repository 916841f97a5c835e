"""
Tests for CSV formatting, run folders and manifests
"""
import json
import re

import numpy as np
import pytest

from src import __version__
from src.core.output_generator import OutputGenerator


def test_format_value():
    output = OutputGenerator()
    assert output.format_value(0.1) == '0.10000000000000001'
    assert float(output.format_value(1 / 3)) == 1 / 3
    assert output.format_value(np.int64(42)) == '42'
    assert output.format_value(7) == '7'
    assert output.format_value(float('nan')) == 'nan'
    assert output.format_value(np.float64(0.0)) == '0'
    assert output.format_value(True) == 'true'
    assert output.format_value('ok') == 'ok'
    assert OutputGenerator(precision=4).format_value(1 / 3) == '0.3333'


def test_write_csv_uses_lf_endings(tmp_path):
    output = OutputGenerator()
    path = output.write_csv(tmp_path, 'table.csv', ['n', 'value'], [(1, 0.5), (2, 0.25)])
    assert path.read_bytes() == b'n,value\n1,0.5\n2,0.25\n'
    with pytest.raises(ValueError):
        output.write_csv(tmp_path, 'bad.csv', ['n', 'value'], [(1,)])


def test_write_columns(tmp_path):
    output = OutputGenerator()
    path = output.write_columns(tmp_path, 'cols.csv', {'a': np.arange(1, 3), 'b': np.array([0.5, 1.5])})
    assert path.read_text() == 'a,b\n1,0.5\n2,1.5\n'
    with pytest.raises(ValueError):
        output.write_columns(tmp_path, 'uneven.csv', {'a': [1, 2], 'b': [1]})


def test_create_output_folder(tmp_path):
    output = OutputGenerator(str(tmp_path / 'runs'))
    folder = output.create_output_folder('spectral')
    assert folder.is_dir()
    assert re.fullmatch(r'spectral_\d{8}_\d{6}', folder.name)
    explicit = output.create_output_folder('spectral', str(tmp_path / 'mine'))
    assert explicit == tmp_path / 'mine' and explicit.is_dir()


def test_write_manifest(tmp_path):
    output = OutputGenerator()
    files = [tmp_path / 'tail.csv']
    path = output.write_manifest(tmp_path, 'tail', {'run': {'n': 5}}, {'master_seed': np.uint64(3)},
                                 files, {'summary': {'gap': np.float64(0.5), 'bad': float('inf'),
                                                     'ok': np.bool_(True)}})
    manifest = json.loads(path.read_text())
    assert manifest['command'] == 'tail'
    assert manifest['version'] == __version__
    assert manifest['config'] == {'run': {'n': 5}}
    assert manifest['seeds'] == {'master_seed': 3}
    assert manifest['files'] == ['tail.csv']
    assert manifest['summary'] == {'gap': 0.5, 'bad': 'inf', 'ok': True}
    assert 'timestamp' in manifest
