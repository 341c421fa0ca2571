"""
蓄積関数の検証と実行可能入力の選択
サンプリングで蓄積性・縮小性・非空性を確認する
"""

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np
from scipy.optimize import minimize_scalar

from ..dynamics.system import ControlSystem, input_lattice, rk4_step_batch
from ..errors import InfeasibleInputError
from ..funcspace.grid import GridFunction
from ..funcspace.storage import StorageFunction

# 縮小性の検査で除外する原点近傍の半径
ORIGIN_RADIUS = 1e-6

# 入力候補間の同点判定
_TIE_TOL = 1e-12


def _lattice_for(sys: ControlSystem, V: StorageFunction, refine: int = 1) -> np.ndarray:
    """合成時の入力格子。refine > 1 なら各区間を refine 等分した細かい格子（元の格子点を含む）"""
    levels = V.input_levels or [21] * sys.input_dim
    return input_lattice(sys, [(count - 1) * refine + 1 for count in levels])


def sample_sublevel(
    V: StorageFunction,
    t: int,
    count: int,
    rng: np.random.Generator,
    snap_to_grid: bool = False,
    max_draw_factor: int = 50,
) -> np.ndarray:
    """
    {x : V(t,x) <= 0} から一様にサンプリング

    外接箱での棄却サンプリング（集めきれなければ少なく返す）。
    snap_to_grid が真なら格子関数の部分レベル集合内の格子点から選ぶ（格子点上の診断用）。

    Returns:
        (K, n) のサンプル（K <= count）
    """
    stage = V.stage(t)
    if isinstance(stage, GridFunction) and snap_to_grid:
        inside = np.flatnonzero(stage.flat_values <= 0.0)
        if inside.size == 0:
            return np.zeros((0, V.num_vars))
        chosen = rng.choice(inside, size=count, replace=inside.size < count)
        nodes = np.stack(np.unravel_index(chosen, stage.shape), axis=1)
        axes = stage.axis_points()
        return np.stack([axes[d][nodes[:, d]] for d in range(V.num_vars)], axis=1)

    lower, upper = V.bounding_box()
    kept: List[np.ndarray] = []
    total = 0
    for _ in range(max_draw_factor):
        batch = rng.uniform(lower, upper, size=(max(count, 64), V.num_vars))
        inside = batch[V.penalized_values(t, batch) <= 0.0]
        kept.append(inside)
        total += inside.shape[0]
        if total >= count:
            break
    if not kept:
        return np.zeros((0, V.num_vars))
    return np.concatenate(kept, axis=0)[:count]


# 黄金分割比 (sqrt(5) - 1) / 2
_GOLDEN = 0.5 * (np.sqrt(5.0) - 1.0)


def _input_spacing(sys: ControlSystem, V: StorageFunction, refine: int) -> np.ndarray:
    levels = V.input_levels or [21] * sys.input_dim
    if len(levels) == 1:
        levels = levels * sys.input_dim
    fine = (np.asarray(levels) - 1) * refine
    return (sys.input_upper - sys.input_lower) / fine


def _golden_refine(sys: ControlSystem, V: StorageFunction, t: int, points: np.ndarray,
                   best_u: np.ndarray, best: np.ndarray, spacing: np.ndarray,
                   iters: int) -> np.ndarray:
    """格子最良入力の隣接区間で V(t+1, f(x,u)) を成分ごとに黄金分割探索（全点を一括で）"""
    best_u = best_u.copy()
    best = best.copy()

    for d in range(sys.input_dim):
        def evaluate(value: np.ndarray, d=d) -> np.ndarray:
            trial = best_u.copy()
            trial[:, d] = value
            return V.penalized_values(t + 1, rk4_step_batch(sys, points, trial))

        a = np.maximum(sys.input_lower[d], best_u[:, d] - spacing[d])
        b = np.minimum(sys.input_upper[d], best_u[:, d] + spacing[d])
        c = b - _GOLDEN * (b - a)
        e = a + _GOLDEN * (b - a)
        fc, fe = evaluate(c), evaluate(e)
        for _ in range(iters):
            left = fc < fe
            b = np.where(left, e, b)
            a = np.where(left, a, c)
            kept = np.where(left, c, e)
            kept_value = np.where(left, fc, fe)
            fresh = np.where(left, b - _GOLDEN * (b - a), a + _GOLDEN * (b - a))
            fresh_value = evaluate(fresh)
            c = np.where(left, fresh, kept)
            e = np.where(left, kept, fresh)
            fc = np.where(left, fresh_value, kept_value)
            fe = np.where(left, kept_value, fresh_value)

        value = np.where(fc < fe, c, e)
        found = np.minimum(fc, fe)
        better = found < best
        best = np.where(better, found, best)
        best_u[better, d] = value[better]
    return best


def storage_gaps(
    sys: ControlSystem,
    V: StorageFunction,
    t: int,
    points,
    input_refine: int = 4,
    line_search_iters: int = 40,
) -> np.ndarray:
    """
    各点での min_u V(t+1, f(x,u)) - V(t,x)

    u は合成時の入力格子を input_refine 倍に細かくした格子で探し、
    最良の格子入力の隣接区間で入力成分ごとに黄金分割探索して詰める
    （line_search_iters = 0 なら格子のみ）。

    Args:
        sys: 制御系
        V: 蓄積関数
        t: 段 (0 <= t < T)
        points: (K, n) の状態
        input_refine: 入力格子の細分割数
        line_search_iters: 黄金分割の反復数

    Returns:
        (K,) の差。蓄積性は全点で <= tol が必要
    """
    if input_refine < 1:
        raise ValueError(f"input_refine は 1 以上が必要です: {input_refine}")
    points = np.atleast_2d(np.asarray(points, dtype=float))
    inputs = _lattice_for(sys, V, input_refine)
    levels, count = inputs.shape[0], points.shape[0]
    successors = rk4_step_batch(
        sys, np.tile(points, (levels, 1)), np.repeat(inputs, count, axis=0)
    )
    succ_values = V.penalized_values(t + 1, successors).reshape(levels, count)
    index = np.argmin(succ_values, axis=0)
    best = succ_values[index, np.arange(count)]
    if line_search_iters > 0:
        spacing = _input_spacing(sys, V, input_refine)
        best = _golden_refine(sys, V, t, points, inputs[index], best, spacing, line_search_iters)
    return best - V.penalized_values(t, points)


@dataclass
class StorageReport:
    """蓄積関数の検証結果"""
    storage_gap: float                # (a) max over samples of min_u V(t+1,f) - V(t,x)
    contraction_gap: float            # (b) min over samples of V(2,x) - V(1,x)
    nonempty: List[bool]              # (c) 段ごとの非空性
    tol: float
    samples: int
    stage_counts: List[int] = field(default_factory=list)
    worst_storage_point: Optional[List[float]] = None
    worst_contraction_point: Optional[List[float]] = None

    @property
    def storage_passed(self) -> bool:
        return self.storage_gap <= self.tol

    @property
    def contraction_passed(self) -> bool:
        return bool(np.isfinite(self.contraction_gap)) and self.contraction_gap > 0.0

    @property
    def nonempty_passed(self) -> bool:
        return all(self.nonempty)

    @property
    def passed(self) -> bool:
        return self.storage_passed and self.contraction_passed and self.nonempty_passed

    def to_rows(self) -> List[Dict[str, object]]:
        """CSV 用の行（check, value, threshold, passed）"""
        return [
            {"check": "storage", "value": self.storage_gap, "threshold": self.tol,
             "passed": self.storage_passed},
            {"check": "contraction", "value": self.contraction_gap, "threshold": 0.0,
             "passed": self.contraction_passed},
            {"check": "nonempty", "value": float(sum(self.nonempty)), "threshold": float(len(self.nonempty)),
             "passed": self.nonempty_passed},
        ]

    def summary(self) -> str:
        mark = lambda ok: "✓" if ok else "✗"
        empty = [t for t, ok in enumerate(self.nonempty) if not ok]
        lines = [
            f"{mark(self.storage_passed)} 蓄積性: max min_u [V(t+1,f) - V(t,x)] = {self.storage_gap:.3e} (許容 {self.tol:.1e})",
            f"{mark(self.contraction_passed)} 縮小性: min [V(2,x) - V(1,x)] = {self.contraction_gap:.3e} (> 0 が必要)",
            f"{mark(self.nonempty_passed)} 非空性: {sum(self.nonempty)}/{len(self.nonempty)} 段"
            + (f"（空の段: {empty}）" if empty else ""),
        ]
        if self.worst_storage_point is not None and not self.storage_passed:
            lines.append(f"   蓄積性の最悪点: {self.worst_storage_point}")
        if self.worst_contraction_point is not None and not self.contraction_passed:
            lines.append(f"   縮小性の最悪点: {self.worst_contraction_point}")
        return "\n".join(lines)


def verify_storage(
    sys: ControlSystem,
    V: StorageFunction,
    samples: int = 1000,
    tol: float = 1e-6,
    seed: int = 0,
    snap_to_grid: bool = False,
    input_refine: int = 4,
    line_search_iters: int = 40,
) -> StorageReport:
    """
    蓄積関数の 3 条件をサンプリングで検証

    (a) V(t,x) <= 0 の点で min_u V(t+1, f(x,u)) - V(t,x) <= tol
        （u は input_refine 倍に細かくした入力格子と、その隣接区間での黄金分割探索。storage_gaps を参照）
    (b) V(2,x) <= 0 かつ x != 0 の点で V(2,x) - V(1,x) > 0
    (c) 各段の部分レベル集合が空でない

    Args:
        sys: 制御系
        V: 蓄積関数
        samples: 段ごとのサンプル数
        tol: 蓄積性の許容誤差
        seed: 乱数シード
        snap_to_grid: サンプルを格子点に揃えるか（既定は箱内の一様サンプル）
        input_refine: (a) の入力格子の細分割数
        line_search_iters: (a) の黄金分割の反復数（0 で格子のみ）

    Returns:
        StorageReport（例外は送出せず、合否を保持する）
    """
    if input_refine < 1:
        raise ValueError(f"input_refine は 1 以上が必要です: {input_refine}")
    rng = np.random.default_rng(seed)

    storage_gap = -np.inf
    worst_storage = None
    nonempty: List[bool] = []
    counts: List[int] = []
    stage_samples: Dict[int, np.ndarray] = {}

    for t in range(V.horizon + 1):
        points = sample_sublevel(V, t, samples, rng, snap_to_grid)
        stage_samples[t] = points
        counts.append(int(points.shape[0]))
        nonempty.append(points.shape[0] > 0)
        if t == V.horizon or points.shape[0] == 0:
            continue
        gaps = storage_gaps(sys, V, t, points, input_refine, line_search_iters)
        worst = int(np.argmax(gaps))
        if gaps[worst] > storage_gap:
            storage_gap = float(gaps[worst])
            worst_storage = points[worst].tolist()

    contraction_gap = np.nan
    worst_contraction = None
    if V.horizon >= 2:
        points = stage_samples[2]
        points = points[np.linalg.norm(points, axis=1) >= ORIGIN_RADIUS]
        if points.shape[0] > 0:
            gaps = V.penalized_values(2, points) - V.penalized_values(1, points)
            worst = int(np.argmin(gaps))
            contraction_gap = float(gaps[worst])
            worst_contraction = points[worst].tolist()

    return StorageReport(
        storage_gap=float(storage_gap),
        contraction_gap=float(contraction_gap),
        nonempty=nonempty,
        tol=tol,
        samples=samples,
        stage_counts=counts,
        worst_storage_point=worst_storage,
        worst_contraction_point=worst_contraction,
    )


def _selection_scores(sys: ControlSystem, V: StorageFunction, t: int,
                      x: np.ndarray, inputs: np.ndarray) -> np.ndarray:
    successors = rk4_step_batch(sys, np.tile(x, (inputs.shape[0], 1)), inputs)
    scores = V.penalized_values(t + 1, successors)
    kappa = V.dissipation_weight
    if kappa > 0.0:
        scores = scores + kappa * np.sum(inputs ** 2, axis=1)
    return scores


def _pick_lattice_input(scores: np.ndarray, inputs: np.ndarray) -> int:
    """最小値の候補のうち ‖u‖ が最小、さらに辞書式で最小のもの"""
    best = np.min(scores)
    tied = np.flatnonzero(scores <= best + _TIE_TOL)
    norms = np.linalg.norm(inputs[tied], axis=1)
    keys = [inputs[tied][:, d] for d in range(inputs.shape[1] - 1, -1, -1)] + [norms]
    return int(tied[np.lexsort(keys)[0]])


def select_viable_input(
    sys: ControlSystem,
    V: StorageFunction,
    t: int,
    x,
    refine: bool = True,
) -> np.ndarray:
    """
    実行可能入力 h_U(t, x) の選択

    入力格子上で V(t+1, f(x,u)) + κ‖u‖^2 を最小化し（κ は合成時の散逸重み）、
    入力成分ごとに隣接セル内の有界 1 次元探索で改善する。

    Args:
        sys: 制御系
        V: 蓄積関数
        t: 段 (0 <= t < T)
        x: 状態ベクトル
        refine: 1 次元探索による改善を行うか

    Returns:
        入力ベクトル
    """
    x = np.asarray(x, dtype=float).ravel()
    if not 0 <= t < V.horizon:
        raise IndexError(f"段 t={t} は範囲 [0, {V.horizon - 1}] の外です")
    value = float(V.penalized_values(t, x)[0])
    if value > 0.0:
        raise InfeasibleInputError(
            f"V({t}, x) = {value:.6g} > 0 のため実行可能入力は保証されません", value
        )

    inputs = _lattice_for(sys, V)
    scores = _selection_scores(sys, V, t, x, inputs)
    index = _pick_lattice_input(scores, inputs)
    best_u = inputs[index].copy()
    best_score = float(scores[index])
    if not refine:
        return best_u

    spacing = _input_spacing(sys, V, 1)

    for d in range(sys.input_dim):
        lower = max(sys.input_lower[d], best_u[d] - spacing[d])
        upper = min(sys.input_upper[d], best_u[d] + spacing[d])

        def score_of(value: float, d=d) -> float:
            trial = best_u.copy()
            trial[d] = value
            return float(_selection_scores(sys, V, t, x, trial[None, :])[0])

        result = minimize_scalar(score_of, bounds=(lower, upper), method='bounded',
                                 options={'xatol': 1e-6})
        if result.success and result.fun < best_score - _TIE_TOL:
            best_u[d] = result.x
            best_score = float(result.fun)
    return best_u


def check_viability(
    sys: ControlSystem,
    V: StorageFunction,
    samples: int = 200,
    tol: float = 1e-6,
    seed: int = 0,
    snap_to_grid: bool = False,
) -> Dict[str, float]:
    """
    一段最適化の終端集合 {V(1,·) <= 0} の生存性

    サンプル x ごとに u = h_U(1, x) を選び V(1, f(x,u)) <= tol を確認する

    Returns:
        {"samples", "fraction_viable", "worst_value"}
    """
    rng = np.random.default_rng(seed)
    points = sample_sublevel(V, 1, samples, rng, snap_to_grid)
    worst = -np.inf
    viable = 0
    for x in points:
        u = select_viable_input(sys, V, 1, x)
        nxt = rk4_step_batch(sys, x[None, :], u[None, :])
        value = float(V.penalized_values(1, nxt)[0])
        worst = max(worst, value)
        viable += value <= tol
    count = points.shape[0]
    return {
        "samples": float(count),
        "fraction_viable": viable / count if count else float('nan'),
        "worst_value": float(worst),
    }


def exhaustive_reach(
    sys: ControlSystem,
    x0,
    horizon: int,
    input_levels: Optional[Sequence[int]] = None,
    decimals: int = 9,
    tol: float = 1e-12,
) -> Optional[np.ndarray]:
    """
    入力格子上の全探索で、状態制約を守りつつ T ステップ後に終端集合へ入る入力列を探す

    同じ状態（decimals 桁に丸めて比較）は 1 つにまとめる

    Returns:
        (horizon, m) の入力列、見つからなければ None
    """
    x0 = np.asarray(x0, dtype=float).ravel()
    if sys.state_constraint.eval(x0) > tol:
        return None
    inputs = input_lattice(sys, input_levels)

    frontier = x0[None, :]
    parents: List[np.ndarray] = []
    choices: List[np.ndarray] = []
    for _ in range(horizon):
        count = frontier.shape[0]
        states = rk4_step_batch(
            sys, np.repeat(frontier, inputs.shape[0], axis=0), np.tile(inputs, (count, 1))
        )
        keep = sys.state_constraint.eval_batch(states) <= tol
        origin = np.repeat(np.arange(count), inputs.shape[0])[keep]
        used = np.tile(np.arange(inputs.shape[0]), count)[keep]
        states = states[keep]
        if states.shape[0] == 0:
            return None
        _, first = np.unique(np.round(states, decimals), axis=0, return_index=True)
        first = np.sort(first)
        frontier = states[first]
        parents.append(origin[first])
        choices.append(used[first])

    reached = np.flatnonzero(sys.terminal_constraint.eval_batch(frontier) <= tol)
    if reached.size == 0:
        return None

    sequence = []
    node = int(reached[0])
    for step in range(horizon - 1, -1, -1):
        sequence.append(inputs[choices[step][node]])
        node = int(parents[step][node])
    return np.array(sequence[::-1])


def in_inner_approximation(V: StorageFunction, t: int, x) -> bool:
    """x ∈ {V(t,·) <= 0} か（外挿点は常に外側）"""
    return V.contains(t, x)
