"""
閉ループシミュレーション
一段 MPC と全ホライズン MPC をプラントに適用し、軌道を記録する
"""

from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Union

import numpy as np
import pandas as pd

from ..dynamics.system import ControlSystem, CostWeights, rk4_step, stage_cost
from ..errors import DimensionError, PreconditionError
from ..funcspace.storage import StorageFunction
from ..nlpsolve.solver import SolveResult, SolverConfig
from .problems import FullHorizonProblem, OneStepProblem, solve_full_horizon, solve_one_step


@dataclass
class TrajectoryLog:
    """閉ループ軌道の記録（|inputs| = |states| - 1）"""
    states: List[np.ndarray] = field(default_factory=list)
    inputs: List[np.ndarray] = field(default_factory=list)
    stage_costs: List[float] = field(default_factory=list)
    storage_values: List[float] = field(default_factory=list)
    eq11_residuals: List[float] = field(default_factory=list)
    solve_times: List[float] = field(default_factory=list)
    statuses: List[str] = field(default_factory=list)
    controller: str = ""
    alpha: Optional[float] = None
    input_dim: int = 0

    def __post_init__(self):
        if self.states and len(self.inputs) != len(self.states) - 1:
            raise DimensionError(
                f"入力数 {len(self.inputs)} は状態数 {len(self.states)} - 1 と一致する必要があります"
            )

    @property
    def num_steps(self) -> int:
        return len(self.inputs)

    @property
    def state_array(self) -> np.ndarray:
        return np.array(self.states)

    @property
    def input_array(self) -> np.ndarray:
        return np.array(self.inputs)

    @property
    def final_state(self) -> np.ndarray:
        return self.states[-1]

    @property
    def infeasible_steps(self) -> List[int]:
        return [t for t, status in enumerate(self.statuses) if status == "infeasible"]

    def to_dataframe(self) -> pd.DataFrame:
        """
        1 ステップ 1 行の表

        列: t, x_1..x_n, u_1..u_m, stage_cost, V1_next, eq11_residual, solve_time_s, status
        最終状態は入力なしの行として末尾に置く
        """
        steps = self.num_steps
        n = len(self.states[0]) if self.states else 0
        m = len(self.inputs[0]) if self.inputs else self.input_dim

        def padded(values: List[float]) -> List[float]:
            values = list(values)[:steps]
            return values + [float('nan')] * (steps + 1 - len(values))

        data = {"t": list(range(len(self.states)))}
        states = self.state_array
        for i in range(n):
            data[f"x_{i + 1}"] = states[:, i]
        inputs = self.input_array.reshape(steps, m)
        for j in range(m):
            data[f"u_{j + 1}"] = list(inputs[:, j]) + [float('nan')]
        data["stage_cost"] = padded(self.stage_costs)
        data["V1_next"] = padded(self.storage_values)
        data["eq11_residual"] = padded(self.eq11_residuals)
        data["solve_time_s"] = padded(self.solve_times)
        statuses = list(self.statuses[:steps])
        data["status"] = statuses + [""] * (len(self.states) - len(statuses))
        return pd.DataFrame(data)

    def to_csv(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        self.to_dataframe().to_csv(path, index=False)
        return path


class OneStepController:
    """一段 MPC: α V(1, f(x,u)) + W(x,u) を V(1, f(x,u)) <= 0 の下で最小化"""

    kind = "one-step"

    def __init__(self, V: StorageFunction, weights: CostWeights, alpha: float):
        if not alpha > 0.0:
            raise ValueError(f"alpha は正である必要があります: {alpha}")
        self.V = V
        self.weights = weights
        self.alpha = float(alpha)

    def check_initial(self, x0: np.ndarray) -> None:
        """初期状態が V(0, ·) の部分レベル集合に入っているか"""
        value = float(self.V.penalized_values(0, x0)[0])
        if value > 0.0:
            raise PreconditionError(
                f"初期状態 {x0.tolist()} で V(0, x0) = {value:.6g} > 0 です（内近似の外側）", value
            )

    def solve(self, sys: ControlSystem, x: np.ndarray, warm, cfg: SolverConfig):
        """
        Returns:
            (適用する入力, SolveResult, 次ステップのウォームスタート)
        """
        problem = OneStepProblem(sys, self.V, self.weights, self.alpha, x)
        u, _, result = solve_one_step(problem, cfg, warm_start=warm)
        return u, result, u

    def storage_value(self, x: np.ndarray) -> float:
        return float(self.V.penalized_values(1, x)[0])


class FullHorizonController:
    """全ホライズン MPC（固定 T の後退ホライズン、先頭の入力のみ適用）"""

    kind = "full-horizon"
    alpha = None

    def __init__(self, weights: CostWeights, horizon: int):
        if horizon < 2:
            raise ValueError(f"horizon は 2 以上が必要です: {horizon}")
        self.weights = weights
        self.horizon = int(horizon)

    def check_initial(self, x0: np.ndarray) -> None:
        pass

    def solve(self, sys: ControlSystem, x: np.ndarray, warm, cfg: SolverConfig):
        problem = FullHorizonProblem(sys, self.weights, self.horizon, x)
        # 初回のみ初期点格子を使い、以降はシフトした前回解とゼロ入力列から始める
        inputs, result = solve_full_horizon(problem, cfg, warm_start=warm, use_lattice=warm is None)
        shifted = np.vstack([inputs[1:], inputs[-1:]])
        return inputs[0], result, shifted

    def storage_value(self, x: np.ndarray) -> float:
        return float('nan')


Controller = Union[OneStepController, FullHorizonController]


def run_closed_loop(
    controller: Controller,
    sys_model: ControlSystem,
    plant: ControlSystem,
    x0,
    steps: int,
    cfg: Optional[SolverConfig] = None,
    verbose: bool = False,
) -> TrajectoryLog:
    """
    閉ループを steps ステップ実行

    各ステップで sys_model 上の最適化を解き、得た入力を plant に適用する。
    実行不能なステップは最小違反の入力を適用して status に記録し、ループは続ける。

    Args:
        controller: OneStepController または FullHorizonController
        sys_model: 最適化で使うモデル
        plant: 状態を進めるプラント（モデルと同じ次元）
        x0: 初期状態
        steps: ステップ数
        cfg: ソルバー設定
        verbose: 進捗を表示するか

    Returns:
        TrajectoryLog
    """
    cfg = cfg or SolverConfig()
    if (plant.state_dim, plant.input_dim) != (sys_model.state_dim, sys_model.input_dim):
        raise DimensionError("プラントとモデルの次元が一致しません")
    x = np.asarray(x0, dtype=float).ravel()
    if x.size != sys_model.state_dim:
        raise DimensionError(f"初期状態の次元 {x.size} が状態次元 {sys_model.state_dim} と一致しません")
    controller.check_initial(x)

    log = TrajectoryLog(states=[x.copy()], controller=controller.kind, alpha=controller.alpha,
                        input_dim=sys_model.input_dim)
    warm = None
    report_every = max(1, steps // 10)

    for t in range(steps):
        u, result, warm = controller.solve(sys_model, x, warm, cfg)
        x_next = rk4_step(plant, x, u)

        log.inputs.append(np.array(u, dtype=float))
        log.states.append(x_next)
        log.stage_costs.append(stage_cost(controller.weights, x, u))
        log.storage_values.append(controller.storage_value(x_next))
        log.solve_times.append(result.wall_time)
        log.statuses.append(result.status)

        if verbose and result.status == "infeasible":
            print(f"⚠️ t={t}: 実行不能（制約値 {result.constraint_value:.3e}）、最小違反の入力を適用")
        if verbose and (t + 1) % report_every == 0:
            print(f"[{t + 1}/{steps}] ‖x‖ = {np.linalg.norm(x_next):.4f}, "
                  f"solve {result.wall_time * 1e3:.1f} ms, status={result.status}")
        x = x_next

    return log
