import json
import os

import pytest
from click.testing import CliRunner

from nullctl import runner
from nullctl.errors import ConvergenceError
from nullctl.main import cli


def _invoke(*args):
    return CliRunner().invoke(cli, ['--log-level', 'WARNING', *args])


def test_commands_are_registered():
    result = _invoke('--help')
    assert result.exit_code == 0
    for name in runner.PIPELINES:
        assert name in result.output


def test_schedule_command_writes_table_and_manifest(output_dir):
    result = _invoke('schedule', '--set', 'k_max=2', '--set', 'C0=64', '--output-dir', output_dir)
    assert result.exit_code == 0, result.output

    with open(os.path.join(output_dir, 'schedule_schedule.csv')) as handle:
        lines = handle.read().splitlines()
    assert lines == ['stage,T_k,T_tilde_k,T_k_next,rho_k', '1,0,0.25,0.5,8', '2,0.5,0.625,0.75,64']

    with open(os.path.join(output_dir, 'schedule_manifest.json')) as handle:
        manifest = json.load(handle)
    assert manifest['command'] == 'schedule'
    assert manifest['status'] == 'ok'
    assert manifest['tables'] == {'schedule': 'schedule_schedule.csv'}
    assert manifest['config']['k_max'] == 2
    assert 'numpy' in manifest['versions']


def test_schedule_config_file(tmp_path, output_dir):
    path = tmp_path / 'schedule.json'
    path.write_text(json.dumps({'T': 2.0, 'C0': 49, 'k_max': 1}))
    result = _invoke('schedule', '--config', str(path), '--output-dir', output_dir)
    assert result.exit_code == 0
    with open(os.path.join(output_dir, 'schedule_schedule.csv')) as handle:
        assert handle.read().splitlines()[1] == '1,0,0.5,1,7'


@pytest.mark.parametrize('args', [
    ('spectrum', '--set', 'kind=degenerate', '--set', 'alpha=2.5'),
    ('schedule', '--set', 'C0=32'),
    ('schedule', '--set', 'horizon=1'),
    ('lr', '--set', 'rho_cap=32'),
    ('hum', '--set', 'window=[0.5, 0.2]'),
    ('negative', '--set', 'case=3'),
])
def test_invalid_input_exits_2_without_output(args, output_dir):
    result = _invoke(*args, '--output-dir', output_dir)
    assert result.exit_code == 2
    assert not os.path.exists(output_dir)


def test_missing_config_file_exits_2(tmp_path, output_dir):
    result = _invoke('schedule', '--config', str(tmp_path / 'missing.json'), '--output-dir', output_dir)
    assert result.exit_code == 2


def test_domain_violation_in_pipeline_exits_2(output_dir):
    # E = (0, 1/2) rules out the case-1 demonstration
    code, bundle = runner.run('negative', overrides=['E=[[0, 0.5]]', 'F=[[0.5, 1]]', 'n=16', 'runs=1'],
                              output_dir=output_dir)
    assert code == runner.EXIT_INVALID
    assert bundle is None
    assert not os.path.exists(output_dir)


def test_convergence_failure_exits_3_with_diagnostics(monkeypatch, output_dir):
    def failing(cfg, rng, bundle):
        raise ConvergenceError("Power iteration did not converge", {'iterations': 5, 'residual': 0.5})

    monkeypatch.setitem(runner.PIPELINES, 'schedule', failing)
    code, bundle = runner.run('schedule', output_dir=output_dir)
    assert code == runner.EXIT_FAILED
    assert bundle.status == 'failed'
    with open(os.path.join(output_dir, 'schedule_diagnostics.csv')) as handle:
        text = handle.read()
    assert 'ConvergenceError' in text and 'iterations,5' in text
    with open(os.path.join(output_dir, 'schedule_manifest.json')) as handle:
        assert json.load(handle)['status'] == 'failed'


def test_hum_command(output_dir):
    result = _invoke('hum', '--set', 'n=16', '--set', 'dt=0.01', '--set', 'k=2', '--output-dir', output_dir)
    assert result.exit_code == 0, result.output
    for name in ('summary', 'control', 'trajectory'):
        assert os.path.exists(os.path.join(output_dir, f'hum_{name}.csv'))
    with open(os.path.join(output_dir, 'hum_control.csv')) as handle:
        header = handle.readline().strip()
    assert header == 't,gate_y,gate_z,control_norm,outside_support'


def test_runs_are_deterministic(tmp_path):
    overrides = ['n=16', 'dt=0.01', 'runs=3', 'random_initial=true']
    tables = []
    for name in ('first', 'second'):
        directory = str(tmp_path / name)
        code, _ = runner.run('negative', overrides=overrides, seed=7, output_dir=directory)
        assert code == runner.EXIT_OK
        tables.append({f: open(os.path.join(directory, f), 'rb').read()
                       for f in sorted(os.listdir(directory)) if f.endswith('.csv')})
    assert tables[0].keys() == {'negative_runs.csv', 'negative_summary.csv'}
    assert tables[0] == tables[1]


def test_seed_option_reaches_manifest(output_dir):
    result = _invoke('schedule', '--seed', '11', '--output-dir', output_dir)
    assert result.exit_code == 0
    with open(os.path.join(output_dir, 'schedule_manifest.json')) as handle:
        assert json.load(handle)['seed'] == 11


def _read_lines(directory, command, name):
    with open(os.path.join(directory, f'{command}_{name}.csv')) as handle:
        return handle.read().splitlines()


def test_spectrum_command(output_dir):
    result = _invoke('spectrum', '--set', 'kind=laplacian', '--set', 'n=200', '--set', 'k=20',
                     '--set', 'fit_k_min=5', '--output-dir', output_dir)
    assert result.exit_code == 0, result.output
    lines = _read_lines(output_dir, 'spectrum', 'eigenvalues')
    assert lines[0] == 'k,eigenvalue,oracle,relative_error,residual'
    assert len(lines) == 21
    first = lines[1].split(',')
    assert float(first[3]) < 1e-3
    growth = _read_lines(output_dir, 'spectrum', 'growth')
    assert growth[0] == 'exponent,prefactor,residual,k_min,k_max'
    assert abs(float(growth[1].split(',')[0]) - 2.0) < 0.1


def test_spectral_constant_command(output_dir):
    result = _invoke('spectral-constant', '--set', 'n=400', '--set', 'region=[[0, 0.5]]', '--set', 'k_min=2',
                     '--set', 'k_max=8', '--output-dir', output_dir)
    assert result.exit_code == 0, result.output
    lines = _read_lines(output_dir, 'spectral-constant', 'constants')
    assert lines[0] == 'k,eigenvalue,constant,log_constant,predictor,ratio'
    constants = [float(line.split(',')[2]) for line in lines[1:]]
    assert len(constants) == 7
    assert all(c >= 1.0 for c in constants)
    with open(os.path.join(output_dir, 'spectral-constant_manifest.json')) as handle:
        assert json.load(handle)['status'] == 'ok'


def test_lr_command(output_dir):
    result = _invoke('lr', '--set', 'n=32', '--set', 'k_max=2', '--set', 'rho_cap=8', '--output-dir', output_dir)
    assert result.exit_code == 0, result.output
    for name in ('schedule', 'stages', 'bounds', 'control', 'summary'):
        assert os.path.exists(os.path.join(output_dir, f'lr_{name}.csv'))
    summary = _read_lines(output_dir, 'lr', 'summary')
    header = summary[0].split(',')
    assert header[:3] == ['initial_norm', 'y_final_norm', 'z_final_norm']
    values = dict(zip(header, summary[1].split(',')))
    assert float(values['relative_terminal']) < 1.0
    assert len(_read_lines(output_dir, 'lr', 'schedule')) == 3


def test_observability_command(output_dir):
    result = _invoke('observability', '--set', 'n=16', '--set', 'dt=0.01', '--set', 'k_modes=2',
                     '--set', 'cantor_levels=[0, 1]', '--set', 'control_samples=2', '--set', 'n_terms=3',
                     '--set', 'interpolation_samples=2', '--output-dir', output_dir)
    assert result.exit_code == 0, result.output
    for name in ('estimates', 'control_estimate', 'cantor_chain', 'density', 'telescope', 'interpolation'):
        assert os.path.exists(os.path.join(output_dir, f'observability_{name}.csv'))
    fit = _read_lines(output_dir, 'observability', 'interpolation_fit')
    assert fit[0] == 'sigma,slope,intercept,r_squared,excluded,finite,envelope,bounded'
    assert len(fit) == 2
    estimates = _read_lines(output_dir, 'observability', 'estimates')
    assert [line.split(',')[0] for line in estimates[1:]] == ['L2Time', 'L1Time']


def _hum_tables(directory, seed):
    code, _ = runner.run('hum', overrides=['n=16', 'dt=0.01', 'random_initial=true'], seed=seed,
                         output_dir=directory)
    assert code == runner.EXIT_OK
    return {f: open(os.path.join(directory, f), 'rb').read() for f in sorted(os.listdir(directory))
            if f.endswith('.csv')}


def test_seed_controls_random_initial_data(tmp_path):
    first = _hum_tables(str(tmp_path / 'first'), 3)
    again = _hum_tables(str(tmp_path / 'again'), 3)
    other = _hum_tables(str(tmp_path / 'other'), 4)
    assert first == again
    assert first['hum_control.csv'] != other['hum_control.csv']
