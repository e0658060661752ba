import json

import pytest

from src import database
from src.main import render, run


def test_berezin_spectrum_json(capsys):
    assert run(['berezin-spectrum', '--p', '4']) == 0
    payload = json.loads(capsys.readouterr().out)
    assert payload['levels'][1] == pytest.approx(4 / 6)
    assert payload['multiplicities'][:3] == [1, 3, 5]
    assert payload['config']['task'] == 'berezin-spectrum'
    assert 'threads' not in payload['config']['args']
    assert payload['constants']['kappa'] == pytest.approx(2 * 3.141592653589793)


def test_output_is_identical_across_worker_counts(capsys):
    run(['berezin-spectrum', '--p', '3', '--threads', '1'])
    first = capsys.readouterr().out
    run(['berezin-spectrum', '--p', '3', '--threads', '2'])
    assert capsys.readouterr().out == first


def test_gap_table_defaults_to_csv(tmp_path):
    out = tmp_path / 'gap.csv'
    assert run(['gap-table', '--p-min', '4', '--p-max', '8', '--step', '4', '--out', str(out)]) == 0
    lines = out.read_text().splitlines()
    assert all(line.startswith('#') for line in lines[:3])
    header = next(line for line in lines if not line.startswith('#'))
    assert header.split(',')[:2] == ['p', 'gamma1']


def test_render_csv_comments_scalar_fields():
    text = render({'rows': [{'p': 4, 'beta': 0.5}], 'fitted_constant': 8.0}, [{'p': 4, 'beta': 0.5}], 'csv')
    assert text.splitlines() == ['# fitted_constant: 8.0', 'p,beta', '4,0.5']


@pytest.mark.parametrize("argv", [
    [],
    ['no-such-command'],
    ['berezin-spectrum'],
    ['berezin-spectrum', '--p', '0'],
    ['bundle-spectrum', '--p', '3', '--degrees', '0,x'],
    ['rates-sweep', '--degrees', '0,1', '--p-min', '4', '--p-max', '4'],
    ['iterate', '--p', '0', '--variant', 'canonical'],
    ['bundle-spectrum', '--p', '3', '--format', 'csv'],
])
def test_invalid_input_exits_with_one(argv, capsys):
    assert run(argv) == 1
    assert 'validation' in capsys.readouterr().err


def test_help_exits_cleanly():
    assert run(['--help']) == 0


def test_bundle_spectrum_reports_oracle(capsys):
    assert run(['bundle-spectrum', '--p', '8', '--degrees', '0,1']) == 0
    payload = json.loads(capsys.readouterr().out)
    assert payload['oracle_units'] == 'casimir'
    assert payload['kappa'] == pytest.approx(2 * 3.141592653589793)
    assert [row['multiplicity'] for row in payload['oracle_match']] == [4, 2, 6, 4]
    assert payload['multiplicities_match']
    assert [level['multiplicity'] for level in payload['casimir_levels']] == [4, 2, 3, 3]
    assert payload['weitzenbock_gap']['predicted'] == pytest.approx(4 * 3.141592653589793)


def test_line_bundle_spectrum_still_reports_units(capsys):
    assert run(['bundle-spectrum', '--p', '3', '--degrees', '1']) == 0
    payload = json.loads(capsys.readouterr().out)
    assert payload['oracle_units'] == 'casimir'
    assert 'oracle_match' not in payload


def test_unstable_iteration_exits_with_two(capsys):
    code = run(['iterate', '--p', '4', '--degrees', '0,1', '--max-iters', '30', '--jacobian', 'none'])
    assert code == 2
    payload = json.loads(capsys.readouterr().out)
    assert payload['status'] == 'not_converged'
    assert not payload['trace']['converged']


def test_rates_sweep_rows(capsys):
    assert run(['rates-sweep', '--p-min', '4', '--p-max', '8', '--step', '4', '--format', 'json']) == 0
    payload = json.loads(capsys.readouterr().out)
    for row in payload['rows']:
        assert row['beta'] == pytest.approx(row['predicted_beta'], rel=1e-9)
        assert row['neutral_dim'] == 1


def test_functoriality_check_passes(capsys):
    assert run(['functoriality-check', '--p', '3', '--degrees', '0,1', '--samples', '1']) == 0
    payload = json.loads(capsys.readouterr().out)
    assert {'p', 'bundle', 'residual_T', 'residual_Tstar', 'nodes'} <= set(payload)
    assert payload['p'] == 3
    assert payload['bundle'] == [0, 1]
    assert payload['residual_T'] <= payload['tolerance']
    assert payload['residual_Tstar'] <= payload['tolerance']
    assert payload['nodes']['base'] > 0 and payload['nodes']['fiber'] > 0


def test_moment_check_passes(capsys):
    assert run(['moment-check', '--p', '3', '--tests', '1']) == 0
    payload = json.loads(capsys.readouterr().out)
    assert payload['identity_residual'] <= payload['tolerance']


def test_record_flag_writes_ledger(tmp_path, capsys):
    database.configure(f"sqlite:///{tmp_path / 'runs.db'}")
    try:
        assert run(['berezin-spectrum', '--p', '2', '--record']) == 0
        runs = database.recent_runs('berezin-spectrum')
        assert len(runs) == 1
        assert runs[0]['config']['args']['p'] == 2
    finally:
        database.configure(database.Config.DATABASE_URL)
