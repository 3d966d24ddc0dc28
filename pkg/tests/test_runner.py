import filecmp
import json
import os

import pytest

from engawa.config import config_from_mapping
from engawa.output import read_trajectory_csv
from engawa.runner import run


def make_config(**values):
    base = {'geometry': 'ball', 'horizon': 0.2, 'seed': 3, 'stride': 20}
    base.update(values)
    return config_from_mapping(base)


def load_summary(result):
    with open(os.path.join(result.output_dir, 'summary.json')) as f:
        return json.load(f)


def test_run_writes_every_artifact(tmp_path):
    cfg = make_config(n_particles=2, density='soft', paths=2, observables=['radius2:1', 'pairdist2:1:2'])
    result = run(cfg, output_dir=str(tmp_path))

    names = sorted(os.path.basename(f) for f in result.files)
    assert names == ['hist_boundary.csv', 'summary.json', 'trajectory_0.csv', 'trajectory_1.csv']

    traj = read_trajectory_csv(str(tmp_path / 'trajectory_1.csv'), 2, 2)
    assert traj.n_samples == 11

    summary = load_summary(result)
    assert summary['seed'] == 3
    assert summary['paths'] == 2
    assert summary['scheme'] == 'regularized_euler'
    assert len(summary['occupation_fractions']) == 2
    assert set(summary['observables']) == {'radius2:1', 'pairdist2:1:2'}
    assert [r['observable'] for r in summary['martingale_residuals']] == ['radius2:1', 'pairdist2:1:2']
    assert summary['girsanov'] == {'enabled': False}
    assert summary['config']['density'] == 'soft'


def test_zero_horizon_run(tmp_path):
    result = run(make_config(horizon=0.0, observables=['radius2:1']), output_dir=str(tmp_path))
    traj = read_trajectory_csv(str(tmp_path / 'trajectory_0.csv'), 1, 2)
    assert traj.n_samples == 1
    residual = load_summary(result)['martingale_residuals'][0]
    assert residual['estimate'] == 0.0


def test_rerun_is_byte_identical(tmp_path):
    cfg = make_config(n_particles=2, density='soft', paths=2)
    first = run(cfg, output_dir=str(tmp_path / 'first'))
    second = run(cfg, output_dir=str(tmp_path / 'second'))
    for name in ('trajectory_0.csv', 'trajectory_1.csv', 'hist_boundary.csv'):
        assert filecmp.cmp(os.path.join(first.output_dir, name), os.path.join(second.output_dir, name), shallow=False)


def test_reweighted_run_reports_weights(tmp_path):
    cfg = make_config(n_particles=2, density='soft', paths=3, girsanov='reweight', observables=['pairdist2:1:2'],
                      start=[[0.1, 0.0], [-0.1, 0.0]])
    summary = load_summary(run(cfg, output_dir=str(tmp_path)))
    diagnostics = summary['girsanov']
    assert diagnostics['enabled']
    assert diagnostics['min_weight'] <= diagnostics['mean_weight'] <= diagnostics['max_weight']
    assert 1.0 <= diagnostics['effective_sample_size'] <= 3.0
    assert 'reweighted_final_mean' in summary['observables']['pairdist2:1:2']


def test_time_change_run_reports_local_time(tmp_path):
    cfg = make_config(geometry='interval', scheme='time_change', horizon=1.0)
    summary = load_summary(run(cfg, output_dir=str(tmp_path)))
    assert summary['mean_local_time'] >= 0.0
    assert summary['metadata']['fine_steps'] > 0


def test_output_dir_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv('ENGAWA_OUTPUT_DIR', str(tmp_path / 'from-env'))
    result = run(make_config(output_dir=str(tmp_path / 'configured')))
    assert result.output_dir == str(tmp_path / 'from-env')
    assert os.path.exists(tmp_path / 'from-env' / 'summary.json')


@pytest.mark.parametrize('geometry', ['ball', 'interval'])
def test_histogram_has_configured_bins(tmp_path, geometry):
    run(make_config(geometry=geometry, histogram_bins=12), output_dir=str(tmp_path))
    with open(tmp_path / 'hist_boundary.csv') as f:
        assert len(f.read().splitlines()) == 13
