import pytest

from flowregion.config import *

# Cases for run configuration:

def write(tmp_path, text, name='run.yaml'):
    path = tmp_path / name
    path.write_text(text)
    return path

# * Do the defaults answer dotted names?
def test_defaults():
    settings = defaults()

    assert settings.find('flow.layers') == 6
    assert settings.find('pcp.k') == 40
    assert settings.find('data.options') == {}
    assert settings.section('split') == {
        'train': 0.675, 'calibration': 0.225, 'test': 0.1, 'inner': 0.6}

# * Does a document override some keys of a section and inherit the rest?
def test_overrides(tmp_path):
    settings = load(write(tmp_path, '''
version: 1
seed: 7
flow:
  epochs: 5
  hidden: [16]
data:
  generator: ring
  options: {r_inner: 2.0}
'''))

    assert settings.find('seed') == 7
    assert settings.find('flow.epochs') == 5
    assert settings.find('flow.layers') == 6
    assert settings.section('flow')['hidden'] == [16]
    assert settings.section('data')['options'] == {'r_inner': 2.0}
    assert settings.find('data.n') == 5000

# * Are exponent literals that YAML reads as strings taken as numbers?
def test_exponent_strings(tmp_path):
    settings = load(write(tmp_path, 'version: 1\nflow:\n  learning_rate: 1e-2\n'))

    assert settings.find('flow.learning_rate') == 0.01

# * Are unknown keys named by their dotted path?
def test_unknown_keys(tmp_path):
    with pytest.raises(ConfigError, match='flow.depth'):
        load(write(tmp_path, 'version: 1\nflow:\n  depth: 3\n'))
    with pytest.raises(ConfigError, match='Unknown key colour'):
        load(write(tmp_path, 'version: 1\ncolour: red\n'))

# * Are values of the wrong type refused?
def test_wrong_types(tmp_path):
    with pytest.raises(ConfigError, match='alpha must be a number'):
        load(write(tmp_path, 'version: 1\nalpha: plenty\n'))
    with pytest.raises(ConfigError, match='flow.layers'):
        load(write(tmp_path, 'version: 1\nflow:\n  layers: true\n'))
    with pytest.raises(ConfigError, match='flow must be a mapping'):
        load(write(tmp_path, 'version: 1\nflow: 3\n'))
    with pytest.raises(ConfigError, match='methods'):
        load(write(tmp_path, 'version: 1\nmethods: [CONTRA, 4]\n'))

# * Are missing or unsupported versions and levels outside (0, 1) refused?
def test_version_and_alpha(tmp_path):
    with pytest.raises(ConfigError, match='no version'):
        load(write(tmp_path, 'seed: 1\n'))
    with pytest.raises(ConfigError, match='Unsupported'):
        load(write(tmp_path, 'version: 2\n'))
    with pytest.raises(ConfigError, match='alpha'):
        load(write(tmp_path, 'version: 1\nalpha: 1.5\n'))

# * Are files that are not YAML mappings refused with their path?
def test_not_yaml(tmp_path):
    with pytest.raises(ConfigError, match='not a YAML document'):
        load(write(tmp_path, 'version: [1\n'))
    with pytest.raises(ConfigError, match='must be a mapping'):
        load(write(tmp_path, '- 1\n- 2\n'))

# * Does a dumped configuration load back to the same settings?
def test_dump(tmp_path):
    settings = from_document({'version': 1, 'alpha': 0.2, 'pcp': {'k': 8}})
    path = tmp_path / 'dumped.yaml'

    dump(settings, path)
    again = load(path)

    assert again.find('alpha') == 0.2
    assert again.section('pcp') == {'k': 8}
    assert again.section('flow') == settings.section('flow')
