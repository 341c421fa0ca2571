"""
安定性重み α₀ のサンプリング推定と減少条件の検証
W(x,u) <= α (V(1,x) - V(1,f(x,u))) をサンプル点と閉ループ軌道で確認する
"""

import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import List, Optional, Tuple, Union

import numpy as np

from ..dynamics.system import ControlSystem, CostWeights, rk4_step_batch, stage_cost_batch
from ..funcspace.storage import StorageFunction
from ..mpc.closed_loop import TrajectoryLog
from ..synth.verification import sample_sublevel, select_viable_input


CERTIFICATE_FORMAT = "onestep-alpha/1"


@dataclass
class AlphaCertificate:
    """α₀ の推定結果"""
    alpha_est: float
    safety_factor: float
    sample_count: int
    worst_ratio_point: Optional[List[float]]
    min_margin: float
    seed: int
    valid: bool
    raw_ratio_max: float = float('nan')
    offending_point: Optional[List[float]] = None
    reverify_samples: int = 0
    reverify_min_margin: Optional[float] = None

    def summary(self) -> str:
        mark = "✓" if self.valid else "✗"
        lines = [
            f"{mark} α 推定値: {self.alpha_est:.4f}（安全係数 {self.safety_factor}、サンプル {self.sample_count} 点、seed={self.seed}）",
            f"   最小余裕 min[αΔV - W] = {self.min_margin:.3e}",
        ]
        if self.worst_ratio_point is not None:
            lines.append(f"   比 W/ΔV の最悪点: {self.worst_ratio_point}")
        if self.reverify_min_margin is not None:
            lines.append(f"   再検証（{self.reverify_samples} 点）: 最小余裕 {self.reverify_min_margin:.3e}")
        if self.offending_point is not None:
            lines.append(f"   ΔV <= 0 となる点: {self.offending_point}")
        return "\n".join(lines)

    def save(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, 'w', encoding='utf-8') as f:
            json.dump({"format": CERTIFICATE_FORMAT, **asdict(self)}, f, ensure_ascii=False, indent=2)
        return path

    @classmethod
    def load(cls, path: Union[str, Path]) -> 'AlphaCertificate':
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(f"α 証明書が見つかりません: {path}")
        with open(path, 'r', encoding='utf-8') as f:
            data = json.load(f)
        if data.pop("format", None) != CERTIFICATE_FORMAT:
            raise ValueError(f"未対応の証明書フォーマットです: {path}")
        return cls(**data)


def _decrease_samples(
    sys: ControlSystem,
    V: StorageFunction,
    weights: CostWeights,
    points: np.ndarray,
) -> Tuple[np.ndarray, np.ndarray]:
    """
    各点で u = h_U(1, x) を選び (ΔV, W) を返す

    格子点に揃えたサンプルは重複が多いので、異なる点だけを評価して戻す
    """
    if points.shape[0] == 0:
        return np.zeros(0), np.zeros(0)
    unique, inverse = np.unique(points, axis=0, return_inverse=True)
    inverse = np.asarray(inverse).ravel()
    inputs = np.array([select_viable_input(sys, V, 1, x) for x in unique])
    successors = rk4_step_batch(sys, unique, inputs)
    decrease = V.penalized_values(1, unique) - V.penalized_values(1, successors)
    cost = stage_cost_batch(weights, unique, inputs)
    return decrease[inverse], cost[inverse]


def _draw(V: StorageFunction, count: int, origin_exclusion: float, seed: int,
          snap_to_grid: bool) -> np.ndarray:
    rng = np.random.default_rng(seed)
    points = sample_sublevel(V, 1, count, rng, snap_to_grid)
    return points[np.linalg.norm(points, axis=1) >= origin_exclusion]


def verify_alpha(
    sys: ControlSystem,
    V: StorageFunction,
    weights: CostWeights,
    alpha: float,
    samples: int = 2000,
    origin_exclusion: float = 1e-3,
    seed: int = 1,
    snap_to_grid: bool = False,
) -> Tuple[float, Optional[List[float]], int]:
    """
    サンプル点での減少条件の余裕 min [α ΔV - W]

    Returns:
        (最小余裕, 最悪点, 評価したサンプル数)。サンプルが無ければ (inf, None, 0)
    """
    points = _draw(V, samples, origin_exclusion, seed, snap_to_grid)
    decrease, cost = _decrease_samples(sys, V, weights, points)
    if points.shape[0] == 0:
        return float('inf'), None, 0
    margins = alpha * decrease - cost
    worst = int(np.argmin(margins))
    return float(margins[worst]), points[worst].tolist(), int(points.shape[0])


def estimate_alpha(
    sys: ControlSystem,
    V: StorageFunction,
    weights: CostWeights,
    samples: int = 2000,
    origin_exclusion: float = 1e-3,
    safety_factor: float = 1.1,
    seed: int = 0,
    snap_to_grid: bool = False,
    tol: float = 1e-6,
    reverify_factor: int = 0,
) -> AlphaCertificate:
    """
    α₀ をサンプリングで推定

    {V(1,·) <= 0} から ‖x‖ >= origin_exclusion の点を選び、
    u = h_U(1, x) に対する比 W(x,u) / ΔV の最大値に安全係数を掛ける

    Args:
        sys: 制御系
        V: 蓄積関数（verify_storage を通過したもの）
        weights: 段コストの重み
        samples: サンプル数
        origin_exclusion: 除外する原点近傍の半径
        safety_factor: 安全係数（>= 1）
        seed: 乱数シード
        snap_to_grid: サンプルを格子点に揃えるか（既定は箱内の一様サンプル）
        tol: 余裕の許容誤差
        reverify_factor: > 0 なら別シードで samples × reverify_factor 点を再検証

    Returns:
        AlphaCertificate（ΔV <= 0 の点があれば valid=False とその点）
    """
    if safety_factor < 1.0:
        raise ValueError(f"安全係数は 1 以上が必要です: {safety_factor}")

    points = _draw(V, samples, origin_exclusion, seed, snap_to_grid)
    decrease, cost = _decrease_samples(sys, V, weights, points)

    offending = None
    bad = np.flatnonzero(decrease <= 0.0)
    if bad.size:
        offending = points[bad[0]].tolist()

    good = decrease > 0.0
    if np.any(good):
        ratios = np.full(decrease.shape, -np.inf)
        ratios[good] = cost[good] / decrease[good]
        worst = int(np.argmax(ratios))
        raw = float(ratios[worst])
        worst_point = points[worst].tolist()
    else:
        raw, worst_point = float('nan'), None

    alpha_est = safety_factor * raw
    margins = alpha_est * decrease[good] - cost[good]
    min_margin = float(np.min(margins)) if margins.size else float('nan')

    certificate = AlphaCertificate(
        alpha_est=float(alpha_est),
        safety_factor=float(safety_factor),
        sample_count=int(points.shape[0]),
        worst_ratio_point=worst_point,
        min_margin=min_margin,
        seed=int(seed),
        valid=False,
        raw_ratio_max=raw,
        offending_point=offending,
    )

    if reverify_factor > 0 and np.isfinite(alpha_est):
        margin, _, count = verify_alpha(
            sys, V, weights, alpha_est, samples * reverify_factor,
            origin_exclusion, seed + 1, snap_to_grid,
        )
        certificate.reverify_samples = count
        certificate.reverify_min_margin = margin

    certificate.valid = bool(
        offending is None
        and np.isfinite(alpha_est) and alpha_est > 0.0
        and min_margin >= -tol
        and (certificate.reverify_min_margin is None or certificate.reverify_min_margin >= -tol)
    )
    return certificate


def verify_eq11_along(
    log: TrajectoryLog,
    V: StorageFunction,
    weights: CostWeights,
    alpha: float,
) -> np.ndarray:
    """
    閉ループ軌道に沿った減少条件の残差

    residual(t) = α [V(1, x_t) - V(1, x_{t+1})] - W(x_t, u_t)
    結果は log.eq11_residuals にも書き込む

    Returns:
        (ステップ数,) の残差（空の軌道なら空配列）
    """
    if log.num_steps == 0:
        log.eq11_residuals = []
        return np.zeros(0)
    states = log.state_array
    inputs = log.input_array
    values = V.penalized_values(1, states)
    cost = stage_cost_batch(weights, states[:-1], inputs)
    residuals = alpha * (values[:-1] - values[1:]) - cost
    log.eq11_residuals = [float(r) for r in residuals]
    return residuals
