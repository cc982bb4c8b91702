"""
Trace files: trace.csv with its config header, diagnostics.txt, plot.gp and
the resolved run_config.txt.
"""
import logging
import math
import os
from typing import Any, Dict, Iterable, List, Optional, Tuple

import numpy as np
import pandas as pd

from modules.analysis import DiagnosticsReport
from modules.config import format_config, parse_config_text
from modules.simulation import ScenarioConfig, SimulationTrace, build_plant, trace_columns

logger = logging.getLogger(__name__)

TRACE_FILE = 'trace.csv'
DIAGNOSTICS_FILE = 'diagnostics.txt'
PLOT_FILE = 'plot.gp'
CONFIG_FILE = 'run_config.txt'


class TraceFormatError(ValueError):
    """Raised when a trace file does not have the expected layout."""
    pass


def write_trace_csv(trace: SimulationTrace, cfg: ScenarioConfig, path: str) -> str:
    """
    Write the trace with the resolved config as `# key = value` header lines.

    Output depends only on the trace and config, so repeated runs give identical bytes.
    """
    with open(path, 'w', encoding='utf-8', newline='') as f:
        for line in format_config(cfg):
            f.write(f'# {line}\n')
        trace.to_frame().to_csv(f, index=False, lineterminator='\n')
    logger.info(f'Wrote {len(trace)} trace records to {path}')
    return path


def read_header_config(path: str) -> ScenarioConfig:
    """Parse the `# key = value` header of a trace file back into a ScenarioConfig."""
    lines: List[str] = []
    with open(path, 'r', encoding='utf-8') as f:
        for line in f:
            if not line.startswith('#'):
                break
            lines.append(line[1:].strip())
    if not lines:
        raise TraceFormatError(f'{path} has no config header')
    return parse_config_text('\n'.join(lines), source=path)


def read_trace_csv(path: str) -> Tuple[SimulationTrace, ScenarioConfig]:
    """
    Load a trace written by write_trace_csv.

    Reference derivatives and the disturbance are re-evaluated from the plant
    at the recorded times. Premise distances and firing sums are not stored
    in the CSV and come back as None.

    Raises:
        TraceFormatError: If the file is missing or its columns do not match
    """
    if not os.path.isfile(path):
        raise TraceFormatError(f'Trace file not found: {path}')
    cfg = read_header_config(path)
    plant = build_plant(cfg)
    frame = pd.read_csv(path, comment='#')
    expected = trace_columns(plant.state_dim)
    if list(frame.columns) != expected:
        raise TraceFormatError(f'{path}: columns {list(frame.columns)} do not match {expected}')

    n = plant.state_dim
    t = frame['t'].to_numpy(dtype=float)
    ref = np.array([plant.reference(ti) for ti in t], dtype=float).reshape(-1, 4)
    trace = SimulationTrace(
        t=t,
        x_true=frame[[f'x{i + 1}' for i in range(n)]].to_numpy(dtype=float),
        x_meas=frame[[f'm{i + 1}' for i in range(n)]].to_numpy(dtype=float),
        ref=ref,
        e=frame['e'].to_numpy(dtype=float),
        edot=frame['edot'].to_numpy(dtype=float),
        eddot=frame['eddot'].to_numpy(dtype=float),
        s=frame['s'].to_numpy(dtype=float),
        u_c=frame['u_c'].to_numpy(dtype=float),
        u_n=frame['u_n'].to_numpy(dtype=float),
        u=frame['u'].to_numpy(dtype=float),
        k=frame['k'].to_numpy(dtype=float),
        alpha=frame['alpha'].to_numpy(dtype=float),
        q=frame['q'].to_numpy(dtype=float),
        clamp_flags=frame['clamp_flags'].to_numpy(dtype=np.int64),
        deadzone=frame['deadzone'].to_numpy(dtype=np.int64),
        disturbance=np.array([plant.disturbance(ti) for ti in t], dtype=float),
        dt=cfg.dt,
        plant_name=plant.name,
        metadata={'scenario': cfg.name, 'source': path},
    )
    return trace, cfg


def _format(value: Any) -> str:
    if value is None:
        return 'n/a'
    if isinstance(value, bool):
        return 'true' if value else 'false'
    if isinstance(value, (float, np.floating)):
        value = float(value)
        if math.isnan(value):
            return 'nan'
        return repr(value)
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return str(value)


def format_diagnostics(report: DiagnosticsReport, extra: Optional[Dict[str, Any]] = None) -> List[str]:
    items: Iterable[Tuple[str, Any]] = list((extra or {}).items()) + report.to_items()
    return [f'{key}: {_format(value)}' for key, value in items]


def write_diagnostics(path: str, report: Optional[DiagnosticsReport], extra: Optional[Dict[str, Any]] = None) -> str:
    """Write `key: value` lines; with no report only the extra fields are written."""
    lines = format_diagnostics(report, extra) if report is not None else [f'{k}: {_format(v)}' for k, v in (extra or {}).items()]
    with open(path, 'w', encoding='utf-8', newline='') as f:
        f.write('\n'.join(lines) + '\n')
    logger.info(f'Wrote diagnostics to {path}')
    return path


def read_diagnostics(path: str) -> Dict[str, str]:
    values: Dict[str, str] = {}
    with open(path, 'r', encoding='utf-8') as f:
        for line in f:
            if ': ' in line:
                key, value = line.rstrip('\n').split(': ', 1)
                values[key] = value
    return values


def write_plot_script(path: str, state_dim: int, csv_name: str = TRACE_FILE) -> str:
    """Emit a gnuplot script that plots the trace columns by header name."""
    states = ', \\\n     '.join(f"data using 't':'x{i + 1}' with lines title 'x{i + 1}'" for i in range(state_dim))
    script = f"""# Plots for {csv_name}; render with: gnuplot {os.path.basename(path)}
set datafile separator ','
set datafile commentschars '#'
set key autotitle columnhead
set terminal pngcairo size 1200,900
data = '{csv_name}'

set output 'states.png'
set xlabel 't [s]'
plot data using 't':'xd' with lines title 'xd', \\
     {states}

set output 'error.png'
plot data using 't':'e' with lines title 'e', \\
     data using 't':'s' with lines title 's'

set output 'control.png'
plot data using 't':'u_c' with lines title 'u_c', \\
     data using 't':'u_n' with lines title 'u_n', \\
     data using 't':'u' with lines title 'u'

set output 'adaptation.png'
set multiplot layout 3,1
plot data using 't':'k' with lines title 'k'
plot data using 't':'alpha' with lines title 'alpha'
plot data using 't':'q' with lines title 'q'
unset multiplot
"""
    with open(path, 'w', encoding='utf-8', newline='') as f:
        f.write(script)
    return path


def write_resolved_config(cfg: ScenarioConfig, path: str) -> str:
    with open(path, 'w', encoding='utf-8', newline='') as f:
        f.write('\n'.join(format_config(cfg)) + '\n')
    return path
