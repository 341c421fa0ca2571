"""
MPC モジュール
一段最適化・全ホライズン最適制御問題・閉ループシミュレーション
"""

from .closed_loop import (
    FullHorizonController,
    OneStepController,
    TrajectoryLog,
    run_closed_loop,
)
from .problems import (
    LSE_SHARPNESS,
    FullHorizonProblem,
    OneStepProblem,
    solve_full_horizon,
    solve_one_step,
)

__all__ = [
    'OneStepProblem',
    'FullHorizonProblem',
    'solve_one_step',
    'solve_full_horizon',
    'LSE_SHARPNESS',
    'TrajectoryLog',
    'OneStepController',
    'FullHorizonController',
    'run_closed_loop',
]
