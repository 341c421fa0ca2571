"""
CLI モジュール
実験設定・サブコマンド・結果ファイルの出力
"""

from .commands import (
    COMMANDS,
    cmd_compare,
    cmd_estimate_alpha,
    cmd_run,
    cmd_sweep,
    cmd_synthesize,
    cmd_verify,
)
from .config import ExperimentConfig, needs_estimate, resolve_alpha
from .outputs import plot_script, sweep_table, timing_table, trajectory_stats, write_report, write_trajectory

__all__ = [
    'ExperimentConfig',
    'resolve_alpha',
    'needs_estimate',
    'COMMANDS',
    'cmd_synthesize',
    'cmd_verify',
    'cmd_estimate_alpha',
    'cmd_run',
    'cmd_compare',
    'cmd_sweep',
    'timing_table',
    'trajectory_stats',
    'sweep_table',
    'plot_script',
    'write_report',
    'write_trajectory',
]
