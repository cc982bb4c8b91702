"""
Headless figure panels drawn from a trace (Agg backend, PNG files only).
"""
import logging
import os
from typing import List

import matplotlib
matplotlib.use('Agg')
import matplotlib.pyplot as plt
import pandas as pd
import seaborn as sns

from modules.simulation import SimulationTrace

logger = logging.getLogger(__name__)


def _line_panel(ax, frame: pd.DataFrame, columns: List[str], ylabel: str):
    long = frame.melt(id_vars='t', value_vars=columns, var_name='signal', value_name='value')
    sns.lineplot(data=long, x='t', y='value', hue='signal', ax=ax, linewidth=1.0)
    ax.set_xlabel('t [s]')
    ax.set_ylabel(ylabel)


def render_figures(trace: SimulationTrace, out_dir: str, prefix: str = '') -> List[str]:
    """
    Save the standard panels: states against the reference, tracking error,
    control signals and adapted parameters.

    Returns:
        Paths of the PNG files written
    """
    sns.set_theme(style='whitegrid')
    frame = trace.to_frame()
    n = trace.state_dim
    paths = []

    fig, axes = plt.subplots(n, 1, figsize=(8, 2.6 * n), sharex=True)
    for i, ax in enumerate(axes if n > 1 else [axes]):
        columns = [f'x{i + 1}'] + (['xd'] if i == 0 and trace.plant_name == 'acc' else [])
        _line_panel(ax, frame, columns, f'x{i + 1}')
    paths.append(_save(fig, out_dir, f'{prefix}states.png'))

    fig, ax = plt.subplots(figsize=(8, 3))
    _line_panel(ax, frame, ['e'], 'tracking error')
    paths.append(_save(fig, out_dir, f'{prefix}error.png'))

    fig, ax = plt.subplots(figsize=(8, 3))
    _line_panel(ax, frame, ['u_c', 'u_n', 'u'], 'control')
    paths.append(_save(fig, out_dir, f'{prefix}control.png'))

    fig, axes = plt.subplots(3, 1, figsize=(8, 7), sharex=True)
    for ax, column in zip(axes, ['k', 'alpha', 'q']):
        _line_panel(ax, frame, [column], column)
    paths.append(_save(fig, out_dir, f'{prefix}adaptation.png'))
    return paths


def _save(fig, out_dir: str, name: str) -> str:
    path = os.path.join(out_dir, name)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    logger.info(f'Rendered {path}')
    return path
