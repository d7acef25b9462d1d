import json

import pytest
from scipy import linalg

from flowregion.autodiff import ShapeError
from flowregion.data import DataError
from flowregion.evaluation import ExperimentError
from flowregion.flow import FlowError
from flowregion.cli import *

# Cases for the command line:

CONFIG = '''
version: 1
seed: 5
data:
  generator: moon
  n: 240
flow:
  layers: 2
  hidden: [8]
  epochs: 2
  batch_size: 64
quantile:
  hidden: [4]
  epochs: 2
  batch_size: 64
pcp:
  k: 4
volume:
  samples: 200
  test_points: 3
boundary:
  points: 32
  scatter: 10
eval:
  replications: 2
methods: [RCP, MCQR]
'''

@pytest.fixture
def run(tmp_path):
    path = tmp_path / 'run.yaml'
    path.write_text(CONFIG + f'output: {tmp_path / "out"}\n')
    return path

def out(tmp_path, *names):
    return tmp_path.joinpath('out', *names)

# * Does generating twice write byte-identical data?
def test_generate(run, tmp_path):
    assert main(['generate', str(run)]) == EXIT_OK
    first = out(tmp_path, 'data.csv').read_bytes()
    assert main(['generate', str(run), '--out', str(tmp_path / 'again' / 'data.csv')]) == EXIT_OK

    assert (tmp_path / 'again' / 'data.csv').read_bytes() == first
    assert first.splitlines()[0] == b'x1,x2,y1,y2'
    assert len(first.splitlines()) == 241

# * Does the flow pipeline write a model, its losses, a predictor, diagnostics
#   and region files, reproducibly?
def test_flow_pipeline(run, tmp_path, capsys):
    assert main(['train', str(run), '--method', 'CONTRA']) == EXIT_OK
    model = out(tmp_path, 'model.json').read_bytes()
    assert main(['train', str(run), '--method', 'CONTRA']) == EXIT_OK
    assert out(tmp_path, 'model.json').read_bytes() == model
    assert out(tmp_path, 'losses.csv').read_text().startswith('epoch,nll\n')

    assert main(['calibrate', str(run), str(out(tmp_path, 'model.json'))]) == EXIT_OK
    predictor = json.loads(out(tmp_path, 'predictor.json').read_text())
    assert predictor['kind'] == 'predictor' and predictor['method'] == 'CONTRA'
    assert json.loads(out(tmp_path, 'diagnostics.json').read_text())['count'] == 54

    code = main([
        'predict', str(out(tmp_path, 'predictor.json')), '--config', str(run),
        '--x', '-2', '-1.5', '--x', '-1', '-1', '--y', '0', '7', '--y', '1', '7',
    ])
    assert code == EXIT_OK
    volumes = json.loads(out(tmp_path, 'volume.json').read_text())
    assert [record['x'] for record in volumes['records']] == [[-2.0, -1.5], [-1.0, -1.0]]
    assert all(record['B'] == 200 for record in volumes['records'])
    assert len(out(tmp_path, 'boundary-1.csv').read_text().splitlines()) == 33
    assert out(tmp_path, 'region-0.svg').read_text().count('<path') == 3
    assert out(tmp_path, 'membership.csv').read_text().startswith('x1,x2,y1,y2,inside,score\n')

    diagnose = ['--output', str(out(tmp_path)), 'diagnose', str(out(tmp_path, 'predictor.json'))]
    assert main(diagnose + ['--factor', '1.5']) == EXIT_OK
    assert capsys.readouterr().out.split('\n')[0] in ('OK', 'OVER_DISPERSED', 'UNDER_DISPERSED')

# * Does the quantile pipeline write boxes, and refuse diagnostics?
def test_box_pipeline(run, tmp_path):
    assert main(['train', str(run), '--method', 'MCQR']) == EXIT_OK
    assert main(['calibrate', str(run), str(out(tmp_path, 'model.json'))]) == EXIT_OK
    assert main([
        'predict', str(out(tmp_path, 'predictor.json')), '--config', str(run), '--x', '0', '0',
    ]) == EXIT_OK

    box = json.loads(out(tmp_path, 'box-0.json').read_text())
    assert set(box) == {'lower', 'upper', 'empty', 'volume'}
    assert not out(tmp_path, 'diagnostics.json').exists()
    assert main(['diagnose', str(out(tmp_path, 'predictor.json'))]) == EXIT_CONFIG

# * Does eval write its report and print its table?
def test_eval(run, tmp_path, capsys):
    assert main(['-q', 'eval', str(run)]) == EXIT_OK

    table = capsys.readouterr().out
    summary = json.loads(out(tmp_path, 'eval', 'summary.json').read_text())
    assert 'RCP' in table and 'MCQR' in table
    assert [entry['method'] for entry in summary['summaries']] == ['RCP', 'MCQR']
    assert out(tmp_path, 'eval', 'replications.csv').exists()

# * Do failures exit with the code of their family and one line on stderr?
def test_exit_codes(run, tmp_path, capsys):
    bad = tmp_path / 'bad.yaml'
    bad.write_text('version: 1\nflow:\n  depth: 3\n')

    assert main(['generate', str(tmp_path / 'missing.yaml')]) == EXIT_MISSING
    assert main(['generate', str(bad)]) == EXIT_CONFIG
    assert main(['train', str(run), '--method', 'NLE']) == EXIT_CONFIG
    assert main(['predict', str(run)]) == EXIT_DATA
    lines = capsys.readouterr().err.splitlines()
    errors = [line for line in lines if line.startswith('flowregion ')]
    assert len(errors) == 4
    assert errors[0].startswith('flowregion generate: ')
    assert 'flow.depth' in errors[1]

# * Does a predict call without any x fail as a data error?
def test_predict_needs_x(run, tmp_path):
    assert main(['train', str(run), '--method', 'RCP']) == EXIT_OK
    assert main(['calibrate', str(run), str(out(tmp_path, 'model.json'))]) == EXIT_OK

    assert main(['predict', str(out(tmp_path, 'predictor.json'))]) == EXIT_DATA
    assert main(['calibrate', str(run), str(out(tmp_path, 'predictor.json'))]) == EXIT_DATA

# * Are exceptions mapped to their families, experiments by their cause?
def test_exit_code_families():
    def caused(error):
        wrapper = ExperimentError('replication failed')
        wrapper.__cause__ = error
        return wrapper

    assert exit_code(DataError('x')) == EXIT_DATA
    assert exit_code(ShapeError('x')) == EXIT_DATA
    assert exit_code(FlowError('x')) == EXIT_NUMERIC
    assert exit_code(linalg.LinAlgError('x')) == EXIT_NUMERIC
    assert exit_code(caused(FlowError('x'))) == EXIT_NUMERIC
    assert exit_code(ExperimentError('no cause')) == EXIT_OTHER
    assert exit_code(RuntimeError('x')) == EXIT_OTHER
    assert error_message(FileNotFoundError(2, 'No such file', 'run.yaml')) == 'run.yaml: no such file'

# * Are the logging switches exclusive?
def test_quiet_and_verbose():
    with pytest.raises(SystemExit):
        parser().parse_args(['-q', '-v', 'eval', 'run.yaml'])
