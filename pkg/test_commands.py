import logging
import os

import pandas as pd
import pytest

from app import main
from modules.commands import EXIT_CONFIG, EXIT_DIVERGED, EXIT_INSUFFICIENT, EXIT_OK, SUMMARY_FILE, run_command, sweep_command, verify_command
from modules.config import RunManifest, parse_config
from modules.trace_io import CONFIG_FILE, DIAGNOSTICS_FILE, PLOT_FILE, TRACE_FILE, read_diagnostics, read_header_config, read_trace_csv

logging.basicConfig(level=logging.INFO, format='%(asctime)s - %(name)s - %(levelname)s - %(message)s')
logger = logging.getLogger(__name__)

GOLDEN_ACC_COLUMNS = 't,x1,x2,x3,m1,m2,m3,xd,e,edot,eddot,s,u_c,u_n,u,k,alpha,q,clamp_flags,deadzone'
GOLDEN_NUMERIC_COLUMNS = 't,x1,x2,m1,m2,xd,e,edot,eddot,s,u_c,u_n,u,k,alpha,q,clamp_flags,deadzone'


def _first_data_line(path: str) -> str:
    with open(path, 'r', encoding='utf-8') as f:
        for line in f:
            if not line.startswith('#'):
                return line.rstrip('\n')
    return ''


def test_run_writes_three_files(tmp_path):
    out = tmp_path / 'run'
    status = run_command(RunManifest(scenario_name='scenario2', output_dir=str(out), horizon_override=0.5))
    assert status == EXIT_OK
    assert sorted(os.listdir(out)) == sorted([TRACE_FILE, DIAGNOSTICS_FILE, CONFIG_FILE])
    assert _first_data_line(str(out / TRACE_FILE)) == GOLDEN_NUMERIC_COLUMNS
    diagnostics = read_diagnostics(str(out / DIAGNOSTICS_FILE))
    assert diagnostics['status'] == 'ok'
    assert diagnostics['records'] == '51'
    assert 'identity_premise_all_median' in diagnostics


def test_acc_trace_golden_header(tmp_path):
    status = run_command(RunManifest(scenario_name='scenario1', output_dir=str(tmp_path), horizon_override=0.1))
    assert status == EXIT_OK
    assert _first_data_line(str(tmp_path / TRACE_FILE)) == GOLDEN_ACC_COLUMNS


def test_trace_header_round_trips(tmp_path):
    run_command(RunManifest(scenario_name='scenario2', output_dir=str(tmp_path), seed_override=42, horizon_override=0.2))
    header_cfg = read_header_config(str(tmp_path / TRACE_FILE))
    assert header_cfg == parse_config(str(tmp_path / CONFIG_FILE))
    assert header_cfg.seed == 42
    assert header_cfg.horizon == 0.2


def test_run_is_byte_deterministic(tmp_path):
    for name in ('a', 'b'):
        assert run_command(RunManifest(scenario_name='scenario2', output_dir=str(tmp_path / name), seed_override=42, horizon_override=1.0)) == EXIT_OK
    first = (tmp_path / 'a' / TRACE_FILE).read_bytes()
    second = (tmp_path / 'b' / TRACE_FILE).read_bytes()
    assert first == second


def test_overrides_set_record_count(tmp_path):
    status = main(['run', '--preset', 'scenario2', '--ts', '0.0001', '--horizon', '1.0', '--out', str(tmp_path), '--emit-plots'])
    assert status == EXIT_OK
    frame = pd.read_csv(tmp_path / TRACE_FILE, comment='#')
    assert len(frame) == 10001
    script = (tmp_path / PLOT_FILE).read_text(encoding='utf-8')
    assert f"data = '{TRACE_FILE}'" in script
    assert "'t':'u_c'" in script


def test_verify_reads_back_trace(tmp_path, capsys):
    run_command(RunManifest(scenario_name='scenario2', output_dir=str(tmp_path), horizon_override=0.5))
    report_path = tmp_path / 'verify.txt'
    assert verify_command(str(tmp_path / TRACE_FILE), str(report_path)) == EXIT_OK
    printed = capsys.readouterr().out
    assert 'steady_state_error: ' in printed
    values = read_diagnostics(str(report_path))
    assert values['identity_premise'].startswith('unavailable')
    assert 'identity_output_rate_median' in values


def test_read_trace_restores_columns(tmp_path):
    run_command(RunManifest(scenario_name='scenario2', output_dir=str(tmp_path), horizon_override=0.3))
    trace, cfg = read_trace_csv(str(tmp_path / TRACE_FILE))
    assert len(trace) == 31
    assert trace.state_dim == 2
    assert cfg.plant_name == 'numeric2'
    assert trace.premise_n is None


def test_verify_error_statuses(tmp_path):
    assert verify_command(str(tmp_path / 'missing.csv')) == EXIT_CONFIG
    run_command(RunManifest(scenario_name='scenario2', output_dir=str(tmp_path), horizon_override=0.03))
    assert verify_command(str(tmp_path / TRACE_FILE)) == EXIT_INSUFFICIENT


def test_bad_config_exit_status(tmp_path):
    config = tmp_path / 'bad.cfg'
    config.write_text('plant = numeric2\nlambda = -2\n', encoding='utf-8')
    assert main(['run', '--config', str(config), '--out', str(tmp_path / 'out')]) == EXIT_CONFIG


def test_degenerate_run_writes_partial_outputs(tmp_path):
    config = tmp_path / 'narrow.cfg'
    config.write_text('plant = numeric2\nsnr_db = off\nn_mfs = 1\ninput_range = 0.001\n', encoding='utf-8')
    out = tmp_path / 'out'
    assert main(['run', '--config', str(config), '--out', str(out)]) == EXIT_DIVERGED
    diagnostics = read_diagnostics(str(out / DIAGNOSTICS_FILE))
    assert diagnostics['status'] == 'diverged'
    assert diagnostics['diverged_at_step'] == '0'
    assert (out / TRACE_FILE).exists()


def test_sweep_with_threads(tmp_path):
    config = tmp_path / 'sweep.cfg'
    config.write_text('plant = numeric2\nsnr_db = off\nhorizon = 0.5\n', encoding='utf-8')
    out = tmp_path / 'sweep'
    status = sweep_command(str(config), 'gamma_k=0.5,1.0', str(out), max_workers=2, use_processes=False)
    assert status == EXIT_OK
    for value in ('0.5', '1.0'):
        assert (out / f'gamma_k={value}' / TRACE_FILE).exists()
    summary = pd.read_csv(out / SUMMARY_FILE, dtype={'gamma_k': str})
    assert list(summary['gamma_k']) == ['0.5', '1.0']
    assert set(summary['status']) == {'ok'}
    assert 'final_k' in summary.columns


def test_sweep_rejects_bad_vary(tmp_path):
    config = tmp_path / 'sweep.cfg'
    config.write_text('plant = numeric2\n', encoding='utf-8')
    assert sweep_command(str(config), 'x0=1,2', str(tmp_path / 'out')) == EXIT_CONFIG


if __name__ == '__main__':
    pytest.main([__file__])
