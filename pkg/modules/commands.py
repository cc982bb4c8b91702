"""
Bodies of the run, verify and sweep commands. Each returns a process exit status.
"""
import logging
import os
from dataclasses import dataclass
from typing import Any, Dict, List, Optional

import pandas as pd

from modules.analysis import InsufficientDataError, diagnose, performance_metrics
from modules.batch_processing import BatchProcessor
from modules.config import ConfigError, RunManifest, parse_config, parse_vary, vary_config
from modules.simulation import DivergenceError, ScenarioConfig, SimulationTrace, build_plant, run_scenario
from modules.trace_io import (
    CONFIG_FILE,
    DIAGNOSTICS_FILE,
    PLOT_FILE,
    TRACE_FILE,
    TraceFormatError,
    format_diagnostics,
    read_trace_csv,
    write_diagnostics,
    write_plot_script,
    write_resolved_config,
    write_trace_csv,
)

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_DIVERGED = 1
EXIT_CONFIG = 2
EXIT_INSUFFICIENT = 3

SUMMARY_FILE = 'sweep_summary.csv'


def _write_outputs(cfg: ScenarioConfig, trace: Optional[SimulationTrace], out_dir: str, extra: Dict[str, Any]) -> Dict[str, Any]:
    """Write trace, resolved config and diagnostics; return the diagnostics metrics."""
    write_resolved_config(cfg, os.path.join(out_dir, CONFIG_FILE))
    report = None
    if trace is not None:
        write_trace_csv(trace, cfg, os.path.join(out_dir, TRACE_FILE))
        if extra.get('status') == 'ok':
            try:
                report = diagnose(trace, build_plant(cfg), cfg.smlc)
            except InsufficientDataError as e:
                logger.warning(f'Skipping diagnostics: {str(e)}')
                extra['diagnostics'] = f'unavailable: {e}'
    write_diagnostics(os.path.join(out_dir, DIAGNOSTICS_FILE), report, extra)
    return dict(report.metrics) if report is not None else {}


def run_command(manifest: RunManifest) -> int:
    """
    Run one scenario and write its output files.

    Returns:
        0 on success, 1 on divergence, 2 on configuration errors
    """
    try:
        cfg = manifest.resolve()
        out_dir = manifest.prepare_output()
        build_plant(cfg)
    except (ConfigError, ValueError) as e:
        logger.error(f'Configuration error: {str(e)}')
        return EXIT_CONFIG

    extra: Dict[str, Any] = {'scenario': cfg.name, 'plant': cfg.plant_name, 'seed': cfg.seed, 'timestamp': manifest.timestamp}
    status = EXIT_OK
    try:
        trace = run_scenario(cfg)
        extra['status'] = 'ok'
    except DivergenceError as e:
        logger.error(f'Run diverged: {str(e)}')
        trace = e.trace
        extra['status'] = 'diverged'
        extra['diverged_at_step'] = e.step
        status = EXIT_DIVERGED
    extra['records'] = len(trace) if trace is not None else 0

    _write_outputs(cfg, trace, out_dir, extra)
    if manifest.emit_plots and trace is not None:
        write_plot_script(os.path.join(out_dir, PLOT_FILE), trace.state_dim)
    if manifest.render and trace is not None and len(trace) > 1:
        from modules.figures import render_figures
        render_figures(trace, out_dir)
    logger.info(f'Run {cfg.name} finished with status {extra["status"]}; outputs in {out_dir}')
    return status


def verify_command(trace_path: str, out_path: Optional[str] = None) -> int:
    """
    Re-run the diagnostics on a trace file and print them.

    Returns:
        0 on success, 2 for unreadable traces, 3 when the trace is too short
    """
    try:
        trace, cfg = read_trace_csv(trace_path)
        plant = build_plant(cfg)
    except (TraceFormatError, ConfigError, ValueError) as e:
        logger.error(f'Cannot read trace: {str(e)}')
        return EXIT_CONFIG
    try:
        report = diagnose(trace, plant, cfg.smlc)
    except InsufficientDataError as e:
        logger.error(f'Cannot verify trace: {str(e)}')
        return EXIT_INSUFFICIENT
    extra = {'trace': trace_path, 'scenario': cfg.name, 'records': len(trace)}
    for line in format_diagnostics(report, extra):
        print(line)
    if out_path:
        write_diagnostics(out_path, report, extra)
    return EXIT_OK


@dataclass(frozen=True)
class SweepItem:
    """One run of a parameter sweep."""
    key: str
    value: str
    cfg: ScenarioConfig
    out_dir: str


def run_sweep_item(item: SweepItem) -> Dict[str, Any]:
    """
    Run one sweep value and write its files into its own directory.

    Raises:
        DivergenceError: If the run diverges (after writing the partial trace)
    """
    os.makedirs(item.out_dir, exist_ok=True)
    extra: Dict[str, Any] = {'scenario': item.cfg.name, 'plant': item.cfg.plant_name, 'seed': item.cfg.seed, item.key: item.value}
    try:
        trace = run_scenario(item.cfg)
    except DivergenceError as e:
        extra.update({'status': 'diverged', 'diverged_at_step': e.step, 'records': len(e.trace) if e.trace is not None else 0})
        _write_outputs(item.cfg, e.trace, item.out_dir, extra)
        raise
    extra.update({'status': 'ok', 'records': len(trace)})
    metrics = _write_outputs(item.cfg, trace, item.out_dir, extra)
    if not metrics:
        metrics = performance_metrics(trace)
    metrics.update({'final_k': float(trace.k[-1]), 'final_alpha': float(trace.alpha[-1]), 'final_q': float(trace.q[-1])})
    return metrics


def sweep_command(config_path: str, vary: str, out_dir: str, max_workers: int = 4, use_processes: bool = True) -> int:
    """
    Run the config once per value of the varied key, concurrently.

    Returns:
        0 if every run succeeded, 1 if any run failed, 2 on configuration errors
    """
    try:
        base = parse_config(config_path)
        key, values = parse_vary(vary)
        items = [SweepItem(key, value, vary_config(base, key, value), os.path.join(out_dir, f'{key}={value}')) for value in values]
        os.makedirs(out_dir, exist_ok=True)
    except (ConfigError, OSError) as e:
        logger.error(f'Configuration error: {str(e)}')
        return EXIT_CONFIG

    processor = BatchProcessor(max_workers=max_workers, use_processes=use_processes)
    results = processor.process_batch(items, run_sweep_item, progress_callback=lambda done, total, _: logger.info(f'Sweep progress: {done}/{total}'))

    rows: List[Dict[str, Any]] = []
    for item, metrics, error in results:
        row: Dict[str, Any] = {key: item.value, 'status': 'ok' if error is None else 'failed', 'error': '' if error is None else str(error)}
        row.update(metrics or {})
        rows.append(row)
    summary_path = os.path.join(out_dir, SUMMARY_FILE)
    pd.DataFrame(rows).to_csv(summary_path, index=False, lineterminator='\n')
    logger.info(f'Wrote sweep summary to {summary_path}')
    return EXIT_OK if all(error is None for _, _, error in results) else EXIT_DIVERGED
