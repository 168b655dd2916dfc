# SPDX-FileCopyrightText: 2026 matfac-o-matic contributors
#
# SPDX-License-Identifier: LGPL-3.0-only

import hashlib
import shlex

import pandas as pd
import pytest

from matfac_o_matic import __version__
from matfac_o_matic.__main__ import (EXIT_FAILED, EXIT_INVALID, EXIT_OK,
                                     build_parser, main)
from matfac_o_matic.config import load_config
from matfac_o_matic.control import (PipelineControl, count_parameters,
                                    file_digest, parse_range)
from matfac_o_matic.errors import ValidationError

_SIMULATION = '''\
N = 2
T = 6
A = 5
Q = 1
R = 1
tau_T = 0.01
tau_A = 0.01
kappa = 0.0
'''

_SAMPLER = '''\
n_iterations = 30
n_burnin = 10
log_every = 0
'''


def test_parameter_counts():
    assert count_parameters(188, 6, 8, 96, 22) == (9212, 33276, 108476)
    assert count_parameters(1, 1, 1, 1, 1) == (2, 2, 2)
    assert count_parameters(0, 3, 3, 40, 30) == (0, 0, 0)
    with pytest.raises(ValidationError, match='N'):
        count_parameters(-1, 1, 1, 1, 1)
    with pytest.raises(ValidationError, match='Q'):
        count_parameters(2, 1.5, 1, 1, 1)


@pytest.mark.parametrize('text, expected', [
    ('3', [3]), ('1-4', [1, 2, 3, 4]), ('2,4,6', [2, 4, 6]),
    ('1-3,2,5', [1, 2, 3, 5]), (' 2 , 1 ', [1, 2])])
def test_parse_range(text, expected):
    assert parse_range(text) == expected


@pytest.mark.parametrize('text', ['', '0', 'a', '3-1', '1-x'])
def test_parse_range_rejects(text):
    with pytest.raises(ValidationError):
        parse_range(text)


def test_file_digest(tmp_path):
    path = tmp_path / 'data.csv'
    path.write_bytes(b'population,year,age,count\n')
    assert file_digest(path) == \
        hashlib.sha256(b'population,year,age,count\n').hexdigest()


def test_unknown_command():
    with pytest.raises(ValidationError, match='Unknown command'):
        PipelineControl().do('plot', {})


def test_params_command(capsys):
    code = main(['params', '--N', '188', '--Q', '6', '--R', '8', '--A', '96',
                 '--T', '22'])
    assert code == EXIT_OK
    out = capsys.readouterr().out.splitlines()
    assert out == ['matrix_factor=9212', 'age_factorization=33276',
                   'time_factorization=108476']


def test_exit_codes(tmp_path, capsys):
    with pytest.raises(SystemExit) as info:
        main(['fit', '--out', str(tmp_path)])
    assert info.value.code == EXIT_INVALID
    assert main(['params', '--N', '-1', '--Q', '1', '--R', '1', '--A', '1',
                 '--T', '1']) == EXIT_INVALID
    assert main(['fit', '--data', str(tmp_path / 'missing.csv'), '--out',
                 str(tmp_path / 'fit')]) == EXIT_FAILED
    with pytest.raises(SystemExit) as info:
        main(['--version'])
    assert info.value.code == 0
    assert __version__ in capsys.readouterr().out


def test_parser_defaults():
    args = build_parser().parse_args(['benchmark', '--data', 'x.csv',
                                      '--out', 'o'])
    assert (args.train_length, args.windows, args.horizons) == (17, 5, '1,5')
    args = build_parser().parse_args(['cv', '--data', 'x.csv', '--out', 'o'])
    assert (args.q_range, args.r_range, args.folds) == ('1-10', '1-10', 10)


@pytest.fixture
def simulated(tmp_path):
    config = tmp_path / 'simulation.txt'
    config.write_text(_SIMULATION)
    out = tmp_path / 'sim'
    assert main(['-q', 'simulate', '--config', str(config), '--out',
                 str(out), '--seed', '3']) == EXIT_OK
    return out


def test_simulate_command(simulated):
    panel = pd.read_csv(simulated / 'panel.csv')
    assert len(panel) == 2 * 6 * 5
    assert list(panel.columns) == ['population', 'year', 'age', 'count',
                                   'offset']
    assert (simulated / 'truth' / 'Z.npy').exists()
    assert load_config(simulated / 'simulation.txt')['rng_seed'] == 3
    manifest = load_config(simulated / 'run_manifest.txt')
    assert manifest['command'] == 'simulate'
    assert manifest['seed.simulation'] == 3
    assert manifest['matfac_o_matic'] == __version__


def test_fit_forecast_and_postprocess(simulated, tmp_path):
    data = str(simulated / 'panel.csv')
    fit = tmp_path / 'fit'
    assert main(['-q', 'fit', '--data', data, '--out', str(fit), '--Q', '1',
                 '--R', '1', '--iterations', '30', '--burnin', '10',
                 '--seed', '5']) == EXIT_OK
    manifest = load_config(fit / 'run_manifest.txt')
    assert manifest['seed.sampler'] == 5
    assert manifest['n_draws'] == 20
    assert manifest['input.panel.csv'] == file_digest(data)
    assert load_config(fit / 'prior.txt')['Q'] == 1

    assert main(['-q', 'forecast', '--fit-dir', str(fit), '--horizon',
                 '2']) == EXIT_OK
    summary = pd.read_csv(fit / 'forecast' / 'forecast_summary.csv')
    assert len(summary) == 2 * (2 * 2 * 5)
    assert sorted(summary['year'].unique()) == [7, 8]
    assert load_config(fit / 'forecast' / 'run_manifest.txt')['run_id'] == \
        manifest['run_id']

    assert main(['-q', 'postprocess', '--fit-dir', str(fit), '--truth',
                 str(simulated / 'truth')]) == EXIT_OK
    post = fit / 'postprocess'
    for name in ('factors_time.csv', 'factors_age.csv', 'explained.csv',
                 'recovery.csv', 'sigma2_recovery.csv'):
        assert (post / name).exists()
    assert list(pd.read_csv(post / 'factors_time.csv')['year']) == \
        [1, 2, 3, 4, 5, 6]


def test_fit_init_only(simulated, tmp_path):
    out = tmp_path / 'init'
    assert main(['-q', 'fit', '--data', str(simulated / 'panel.csv'),
                 '--out', str(out), '--Q', '1', '--R', '2',
                 '--init-only']) == EXIT_OK
    assert load_config(out / 'init' / 'manifest.txt')['R'] == 2
    assert not (out / 'draws').exists()


def test_forecast_from_init_only(simulated, tmp_path):
    fit = tmp_path / 'init,run#1'
    args = ['-q', 'fit', '--data', str(simulated / 'panel.csv'), '--out',
            str(fit), '--Q', '1', '--R', '1', '--init-only']
    assert main(args) == EXIT_OK
    assert load_config(fit / 'run_manifest.txt')['argv'] == shlex.join(args)

    assert main(['-q', 'forecast', '--fit-dir', str(fit), '--horizon',
                 '2']) == EXIT_OK
    summary = pd.read_csv(fit / 'forecast' / 'forecast_summary.csv')
    assert len(summary) == 2 * (2 * 2 * 5)
    assert sorted(summary['year'].unique()) == [7, 8]
    assert (summary['sd'] == 0).all()
    manifest = load_config(fit / 'forecast' / 'run_manifest.txt')
    assert manifest['method'] == 'two_step'

    assert main(['-q', 'forecast', '--fit-dir', str(simulated), '--horizon',
                 '2']) == EXIT_INVALID


def test_benchmark_and_report(simulated, tmp_path, capsys):
    data = str(simulated / 'panel.csv')
    bench = tmp_path / 'bench'
    assert main(['-q', 'benchmark', '--data', data, '--spec', 'rw',
                 '--spec', 'time_fact_joint:1', '--train-length', '3',
                 '--windows', '2', '--horizons', '1,2', '--out',
                 str(bench)]) == EXIT_OK
    assert 'time_fact_joint' in capsys.readouterr().out
    frame = pd.read_csv(bench / 'forecast_eval.csv')
    assert len(frame) == 6
    assert (frame['status'] == 'ok').all()

    report = tmp_path / 'report'
    assert main(['-q', 'report', '--inputs', str(bench / 'forecast_eval.csv'),
                 '--out', str(report)]) == EXIT_OK
    table = pd.read_csv(report / 'table.csv')
    assert list(table['Model']) == ['rw', 'time_fact_joint']
    assert 'RMSE h=2' in table.columns
    assert (report / 'table.txt').exists()
    assert (report / 'summary.csv').exists()


def test_cv_command(simulated, tmp_path):
    sampler = tmp_path / 'sampler.txt'
    sampler.write_text(_SAMPLER)
    out = tmp_path / 'cv'
    assert main(['-q', 'cv', '--data', str(simulated / 'panel.csv'),
                 '--q-range', '1', '--r-range', '1-2', '--folds', '2',
                 '--sampler', str(sampler), '--out', str(out),
                 '--threads', '2']) == EXIT_OK
    grid = pd.read_csv(out / 'cv_grid.csv')
    assert len(grid) == 4
    selection = pd.read_csv(out / 'cv_selection.csv')
    assert list(selection['R']) == [1, 2]
    assert 'within_one_se' in selection.columns
    assert load_config(out / 'run_manifest.txt')['seed.master'] == 0
