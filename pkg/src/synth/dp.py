"""
動的計画法による蓄積関数の合成
状態格子上で後ろ向き再帰を解き、段ごとの格子関数を得る
"""

from typing import List, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from ..dynamics.system import ControlSystem, input_lattice, rk4_step_batch
from ..errors import ConfigError, DimensionError, SynthesisError
from ..funcspace.grid import GridFunction, InterpolationPlan
from ..funcspace.storage import StorageFunction


class SynthConfig(BaseModel):
    """DP 合成の設定"""
    model_config = ConfigDict(extra="forbid")

    grid_axes: List[Tuple[float, float, int]]
    input_levels: List[int] = Field(default_factory=lambda: [21])
    contraction_margin: float = Field(default=1e-3, ge=0.0)
    # これより内側では ε の床を ‖x‖^2/r^2 で 0 まで下げる（原点は平衡点）
    origin_radius: float = Field(default=1e-3, gt=0.0)
    horizon: int = Field(ge=1)
    dissipation_weight: float = Field(default=0.0, ge=0.0)
    terminal_iters: int = Field(default=2000, ge=0)
    # 段の順序を反転して保存する（検証の失敗経路の確認用）
    reverse_stages: bool = False

    @field_validator('grid_axes')
    @classmethod
    def _check_axes(cls, axes):
        for lower, upper, count in axes:
            if count < 2:
                raise ValueError(f"格子点数は 2 以上が必要です: {count}")
            if not lower < upper:
                raise ValueError(f"格子の下限 {lower} は上限 {upper} より小さい必要があります")
        return axes

    @field_validator('input_levels')
    @classmethod
    def _check_levels(cls, levels):
        if any(count < 3 for count in levels):
            raise ValueError(f"入力分割数は 3 以上が必要です: {levels}")
        return levels

    @model_validator(mode='after')
    def _check_nonempty(self):
        if not self.grid_axes:
            raise ValueError("grid_axes が空です")
        return self


def _check_grid_box(sys: ControlSystem, grid: GridFunction, nodes: np.ndarray) -> None:
    """格子の箱が状態制約集合の外接箱を含むかを境界の格子点で確認"""
    if grid.num_vars != sys.state_dim:
        raise DimensionError(
            f"格子の次元 {grid.num_vars} が状態次元 {sys.state_dim} と一致しません"
        )
    on_face = np.zeros(nodes.shape[0], dtype=bool)
    for d in range(grid.num_vars):
        on_face |= np.isclose(nodes[:, d], grid.lower[d]) | np.isclose(nodes[:, d], grid.upper[d])
    g_face = sys.state_constraint.eval_batch(nodes[on_face])
    if np.any(g_face < 0.0):
        worst = nodes[on_face][int(np.argmin(g_face))]
        raise ConfigError(
            f"格子の箱が状態制約集合を含んでいません（境界点 {worst.tolist()} で ĝ < 0）"
        )


class _Backup:
    """全格子点・全入力候補の後続状態に対する補間プランを保持"""

    def __init__(self, grid: GridFunction, successors: np.ndarray):
        levels, nodes, _ = successors.shape
        self.levels = levels
        self.nodes = nodes
        self.plan: InterpolationPlan = grid.plan(successors.reshape(levels * nodes, -1))

    def successor_values(self, flat_values: np.ndarray, columns=None) -> np.ndarray:
        """(L, N) または (L, 選択列数) の後続値（箱の外は正の罰則値）"""
        values = self.plan.penalized(flat_values).reshape(self.levels, self.nodes)
        return values if columns is None else values[:, columns]


def synthesize_storage(sys: ControlSystem, cfg: SynthConfig, verbose: bool = False) -> StorageFunction:
    """
    後ろ向き DP で蓄積関数を合成

    q(x) = ‖x‖^2, s(x) = min(1, q(x) / r^2), σ_t = ε t / T,
    m_t(x) = ε s(x) + σ_t q(x), D(x,u) = κ(‖x‖^2 + ‖u‖^2) として

        B_t(x) = max(ĝ(x) + σ_t q(x), min_u [V(t+1, f(x,u)) + m_t(x) + D(x,u)])
        V(t)   = min(B_t, V(t+1))  （V(t+1) > 0 の格子点のみ、符号は変わらない）

    原点から r 以上離れた格子点では V(t,x) >= min_u V(t+1, f(x,u)) + ε が成り立つ。
    t に依存する σ_t q(x) の項が V(t) <= V(t+1) の単調性と x != 0 での狭義の縮小を与える。

    終端段 V(T) は c = max(ĝ + σ_T q, l̂) から始めた同じ形の反復の不動点。

    Args:
        sys: 制御系
        cfg: 合成設定
        verbose: 進捗を表示するか

    Returns:
        格子関数を段とする StorageFunction
    """
    grid = GridFunction(cfg.grid_axes, np.zeros(int(np.prod([a[2] for a in cfg.grid_axes]))))
    nodes = grid.grid_points()
    _check_grid_box(sys, grid, nodes)

    inputs = input_lattice(sys, cfg.input_levels)
    levels, num_nodes = inputs.shape[0], nodes.shape[0]
    horizon = cfg.horizon
    eps = cfg.contraction_margin
    kappa = cfg.dissipation_weight

    if verbose:
        print(f"[1/3] 後続状態を計算中... (格子点 {num_nodes}, 入力候補 {levels})")

    # 後続状態は段に依存しないので一度だけ計算する
    successors = rk4_step_batch(
        sys,
        np.tile(nodes, (levels, 1)),
        np.repeat(inputs, num_nodes, axis=0),
    ).reshape(levels, num_nodes, sys.state_dim)
    backup = _Backup(grid, successors)

    q = np.sum(nodes ** 2, axis=1)
    g = sys.state_constraint.eval_batch(nodes)
    l = sys.terminal_constraint.eval_batch(nodes)
    running = kappa * (q[None, :] + np.sum(inputs ** 2, axis=1)[:, None])

    def sigma(t: int) -> float:
        return eps * t / horizon

    shape = np.minimum(1.0, q / cfg.origin_radius ** 2)

    def margin(t: int) -> np.ndarray:
        return eps * shape + sigma(t) * q

    # 終端段: 不動点反復（正になった格子点は最初の正値で固定）
    if verbose:
        print("[2/3] 終端段の不動点反復中...")
    floor = np.maximum(g + sigma(horizon) * q, l)
    terminal = floor.copy()
    sweeps = 0
    for sweeps in range(1, cfg.terminal_iters + 1):
        active = terminal <= 0.0
        if not np.any(active):
            break
        succ = backup.successor_values(terminal, active)
        candidate = np.min(succ + running[:, active], axis=0) + margin(horizon)[active]
        updated = np.maximum(floor[active], candidate)
        change = float(np.max(np.abs(updated - terminal[active])))
        terminal[active] = updated
        if change <= 1e-12:
            break
    else:
        if cfg.terminal_iters > 0 and verbose:
            print(f"⚠️ 終端段の反復が {cfg.terminal_iters} 回で収束しませんでした")

    values = [None] * (horizon + 1)
    values[horizon] = terminal

    if verbose:
        print(f"[3/3] 後ろ向き再帰中... (T = {horizon}, 終端反復 {sweeps} 回)")
    for t in range(horizon - 1, -1, -1):
        nxt = values[t + 1]
        succ = backup.successor_values(nxt)
        reach = np.min(succ + running, axis=0) + margin(t)
        current = np.maximum(g + sigma(t) * q, reach)
        positive = nxt > 0.0
        current[positive] = np.minimum(current[positive], nxt[positive])
        values[t] = current

    sizes = [int(np.sum(v <= 0.0)) for v in values]
    if all(size == 0 for size in sizes):
        raise SynthesisError(
            "全ての段で部分レベル集合が空です。格子を細かくするか horizon を見直してください"
        )

    stages = [grid.with_values(v) for v in values]
    if cfg.reverse_stages:
        stages = stages[::-1]

    meta = {
        "system": sys.name,
        "input_levels": [int(v) for v in cfg.input_levels],
        "contraction_margin": eps,
        "origin_radius": cfg.origin_radius,
        "dissipation_weight": kappa,
        "terminal_sweeps": sweeps,
        "reversed": bool(cfg.reverse_stages),
    }
    if verbose:
        print(f"✓ 合成完了: 部分レベル集合の格子点数 V(0)={sizes[0]}, V(T)={sizes[-1]}")
    return StorageFunction(stages, horizon, meta)
