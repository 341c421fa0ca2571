"""
箱制約と 1 本の不等式制約を持つ最小化ソルバー
拡張ラグランジュ法（外側）と射影勾配法（内側）の組み合わせ
"""

import time
from dataclasses import dataclass, field
from typing import Callable, List, Literal, Optional, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from ..errors import DimensionError, NumericError


ScalarFunction = Callable[[np.ndarray], float]
GradientFunction = Callable[[np.ndarray], np.ndarray]

Status = Literal["converged", "max-iters", "infeasible"]

_ARMIJO = 1e-4
_MAX_HALVINGS = 60
_MIN_STEP_NORM = 1e-12


class SolverConfig(BaseModel):
    """ソルバー設定"""
    model_config = ConfigDict(extra="forbid")

    max_outer_iters: int = Field(default=30, ge=1)
    max_inner_iters: int = Field(default=200, ge=1)
    constraint_tol: float = Field(default=1e-6, gt=0.0)
    stationarity_tol: float = Field(default=1e-6, gt=0.0)
    penalty_init: float = Field(default=10.0, gt=0.0)
    penalty_growth: float = Field(default=10.0, gt=1.0)
    multistart_points: int = Field(default=9, ge=1)
    gradient_mode: Literal["analytic", "central-difference"] = "central-difference"
    fd_step: float = Field(default=1e-6, gt=0.0)


@dataclass
class SolveResult:
    """最小化の結果"""
    minimizer: np.ndarray
    objective: float
    constraint_value: float
    status: Status
    wall_time: float
    outer_iterations: int
    inner_iterations: int
    projected_gradient_norm: float = float('nan')
    violation_history: List[float] = field(default_factory=list)
    starts_tried: int = 0

    @property
    def feasible(self) -> bool:
        return self.status != "infeasible"


@dataclass
class _Run:
    z: np.ndarray
    objective: float
    constraint: float
    stationary: bool
    outer: int
    inner: int
    pg_norm: float
    history: List[float]


def multistart_lattice(lower: np.ndarray, upper: np.ndarray, points: int) -> np.ndarray:
    """
    初期点の格子

    2 次元以下はテンソル格子（合計がおよそ points 個）、それ以上は箱の対角線上の定数ベクトル
    """
    dim = lower.size
    if points == 1:
        return (0.5 * (lower + upper))[None, :]
    if dim <= 2:
        per_dim = max(2, int(round(points ** (1.0 / dim))))
        axes = [np.linspace(lo, hi, per_dim) for lo, hi in zip(lower, upper)]
        mesh = np.meshgrid(*axes, indexing='ij')
        return np.stack([m.ravel() for m in mesh], axis=1)
    ratios = np.linspace(0.0, 1.0, points)
    return lower[None, :] + ratios[:, None] * (upper - lower)[None, :]


class _Problem:
    """目的・制約と勾配（解析的または中心差分）をまとめる"""

    def __init__(self, objective, inequality, lower, upper, cfg,
                 gradient=None, inequality_gradient=None):
        self.objective = objective
        self.inequality = inequality
        self.lower = lower
        self.upper = upper
        self.cfg = cfg
        analytic = cfg.gradient_mode == "analytic"
        self._gradient = gradient if analytic else None
        self._inequality_gradient = inequality_gradient if analytic else None

    def project(self, z: np.ndarray) -> np.ndarray:
        return np.clip(z, self.lower, self.upper)

    def f(self, z: np.ndarray) -> float:
        value = float(self.objective(z))
        if not np.isfinite(value):
            raise NumericError("目的関数が非有限値になりました", z)
        return value

    def c(self, z: np.ndarray) -> float:
        value = float(self.inequality(z))
        if not np.isfinite(value):
            raise NumericError("制約関数が非有限値になりました", z)
        return value

    def _difference(self, fun: Callable[[np.ndarray], float], z: np.ndarray) -> np.ndarray:
        grad = np.zeros_like(z)
        for i in range(z.size):
            h = self.cfg.fd_step * (1.0 + abs(z[i]))
            forward, backward = z.copy(), z.copy()
            forward[i] += h
            backward[i] -= h
            grad[i] = (fun(forward) - fun(backward)) / (2.0 * h)
        return grad

    def grad_f(self, z: np.ndarray) -> np.ndarray:
        if self._gradient is not None:
            return np.asarray(self._gradient(z), dtype=float)
        return self._difference(self.f, z)

    def grad_c(self, z: np.ndarray) -> np.ndarray:
        if self._inequality_gradient is not None:
            return np.asarray(self._inequality_gradient(z), dtype=float)
        return self._difference(self.c, z)


def _directional_stationarity(problem: _Problem, fun, z: np.ndarray, value: float):
    """
    座標方向の片側差分による停留性の尺度

    格子補間を含む目的は区分的に滑らかなので、折れ目では勾配ではなく
    実行可能な座標方向 ±e_i の片側方向微分で判定する。
    降下方向が無ければ 0。

    Returns:
        (尺度, 最も降下する方向または None, その方向微分)
    """
    cfg = problem.cfg
    rates = np.zeros(z.size)
    best_direction, best_rate = None, 0.0
    for i in range(z.size):
        h = cfg.fd_step * (1.0 + abs(z[i]))
        for sign in (1.0, -1.0):
            trial = z.copy()
            trial[i] += sign * h
            trial = problem.project(trial)
            moved = abs(trial[i] - z[i])
            if moved <= 0.0:
                continue
            rate = (fun(trial) - value) / moved
            if rate < -rates[i]:
                rates[i] = -rate
            if rate < best_rate:
                direction = np.zeros(z.size)
                direction[i] = sign
                best_direction, best_rate = direction, rate
    return float(np.linalg.norm(rates)), best_direction, best_rate


def _coordinate_step(problem: _Problem, fun, z: np.ndarray, value: float,
                     direction: np.ndarray, rate: float):
    """座標方向のバックトラック探索（最後に差分幅そのものを試す。十分減少が無ければ None）"""
    i = int(np.argmax(np.abs(direction)))
    h = problem.cfg.fd_step * (1.0 + abs(z[i]))
    lengths = []
    length = 1.0
    while length > h:
        lengths.append(length)
        length *= 0.5
    lengths.append(h)
    for length in lengths:
        trial = problem.project(z + length * direction)
        moved = float(np.linalg.norm(trial - z))
        if moved <= 0.0:
            continue
        trial_value = fun(trial)
        if trial_value <= value + _ARMIJO * rate * moved:
            return trial, trial_value
    return None


def _projected_gradient(problem: _Problem, fun, grad, z: np.ndarray):
    """
    射影勾配法（Barzilai-Borwein 試行ステップ + Armijo バックトラック）

    勾配方向で十分減少が得られないときは座標方向の片側方向微分を調べ、
    降下方向があればその方向に進み、無ければ停留点として終了する

    Returns:
        (z, 反復回数, 停留したか, 停留性の尺度)
    """
    cfg = problem.cfg
    value = fun(z)
    g = grad(z)
    step = 1.0
    pg_norm = float('inf')

    for iteration in range(1, cfg.max_inner_iters + 1):
        pg_norm = float(np.linalg.norm(z - problem.project(z - g)))
        if pg_norm <= cfg.stationarity_tol:
            return z, iteration - 1, True, pg_norm

        trial_step = step
        accepted = False
        for _ in range(_MAX_HALVINGS):
            trial = problem.project(z - trial_step * g)
            move = trial - z
            if np.linalg.norm(move) <= _MIN_STEP_NORM * (1.0 + np.linalg.norm(z)):
                break
            trial_value = fun(trial)
            if trial_value <= value + _ARMIJO * float(g @ move):
                accepted = True
                break
            trial_step *= 0.5

        if not accepted:
            measure, direction, rate = _directional_stationarity(problem, fun, z, value)
            if measure <= cfg.stationarity_tol:
                return z, iteration, True, measure
            moved = _coordinate_step(problem, fun, z, value, direction, rate)
            if moved is None:
                return z, iteration, False, measure
            z, value = moved
            g = grad(z)
            step = 1.0
            continue

        trial_grad = grad(trial)
        s, y = trial - z, trial_grad - g
        sy = float(s @ y)
        step = float(s @ s) / sy if sy > 1e-16 else 2.0 * trial_step
        step = float(np.clip(step, 1e-10, 1e10))
        z, value, g = trial, trial_value, trial_grad

    pg_norm = float(np.linalg.norm(z - problem.project(z - g)))
    if pg_norm > cfg.stationarity_tol:
        pg_norm = min(pg_norm, _directional_stationarity(problem, fun, z, value)[0])
    return z, cfg.max_inner_iters, pg_norm <= cfg.stationarity_tol, pg_norm


def _solve_from(problem: _Problem, start: np.ndarray) -> _Run:
    """1 つの初期点からの拡張ラグランジュ法"""
    cfg = problem.cfg
    z = problem.project(start.astype(float))
    multiplier = 0.0
    penalty = cfg.penalty_init
    previous_violation = float('inf')
    history: List[float] = []
    inner_total = 0
    stationary = False
    pg_norm = float('nan')

    outer = 0
    for outer in range(1, cfg.max_outer_iters + 1):
        lam, rho = multiplier, penalty

        def augmented(v: np.ndarray) -> float:
            shifted = max(0.0, lam + rho * problem.c(v))
            return problem.f(v) + (shifted ** 2 - lam ** 2) / (2.0 * rho)

        def augmented_grad(v: np.ndarray) -> np.ndarray:
            shifted = max(0.0, lam + rho * problem.c(v))
            grad = problem.grad_f(v)
            if shifted > 0.0:
                grad = grad + shifted * problem.grad_c(v)
            return grad

        z, inner, stationary, pg_norm = _projected_gradient(problem, augmented, augmented_grad, z)
        inner_total += inner

        constraint = problem.c(z)
        violation = max(constraint, 0.0)
        history.append(violation)
        multiplier = max(0.0, lam + rho * constraint)

        if violation <= cfg.constraint_tol and abs(multiplier - lam) <= cfg.stationarity_tol * (1.0 + lam):
            break
        if violation > 0.25 * previous_violation:
            penalty *= cfg.penalty_growth
        previous_violation = violation

    return _Run(
        z=z,
        objective=problem.f(z),
        constraint=problem.c(z),
        stationary=stationary,
        outer=outer,
        inner=inner_total,
        pg_norm=pg_norm,
        history=history,
    )


def _better(a: _Run, b: _Run, tol: float) -> bool:
    """a が b より良いか（実行可能性 → 目的値 → 辞書式）"""
    a_ok, b_ok = a.constraint <= tol, b.constraint <= tol
    if a_ok != b_ok:
        return a_ok
    if not a_ok:
        return a.constraint < b.constraint
    scale = 1e-12 * (1.0 + abs(b.objective))
    if a.objective < b.objective - scale:
        return True
    if a.objective > b.objective + scale:
        return False
    return tuple(a.z) < tuple(b.z)


def minimize(
    objective: ScalarFunction,
    inequality: ScalarFunction,
    lower,
    upper,
    cfg: Optional[SolverConfig] = None,
    starts: Optional[Sequence] = None,
    gradient: Optional[GradientFunction] = None,
    inequality_gradient: Optional[GradientFunction] = None,
    use_lattice: bool = True,
) -> SolveResult:
    """
    箱制約付きで objective を最小化（inequality(z) <= 0 を課す）

    Args:
        objective: 目的関数
        inequality: スカラー不等式制約（<= 0 で実行可能）
        lower, upper: 箱の下限・上限
        cfg: ソルバー設定
        starts: 追加の初期点（ウォームスタートなど）
        gradient, inequality_gradient: 解析的勾配（gradient_mode="analytic" のとき使用）
        use_lattice: 初期点格子を加えるか

    Returns:
        全初期点の中で最良の SolveResult
    """
    cfg = cfg or SolverConfig()
    started = time.perf_counter()

    lower = np.asarray(lower, dtype=float).ravel()
    upper = np.asarray(upper, dtype=float).ravel()
    if lower.shape != upper.shape or not np.all(lower <= upper):
        raise DimensionError(f"箱が不正です: lower={lower}, upper={upper}")

    candidates: List[np.ndarray] = []
    for start in starts or []:
        start = np.asarray(start, dtype=float).ravel()
        if start.shape != lower.shape:
            raise DimensionError(f"初期点の次元 {start.size} が決定変数の次元 {lower.size} と一致しません")
        candidates.append(start)
    if use_lattice or not candidates:
        candidates.extend(multistart_lattice(lower, upper, cfg.multistart_points))

    # 重複する初期点を除く（順序は保持）
    unique: List[np.ndarray] = []
    for start in candidates:
        start = np.clip(start, lower, upper)
        if not any(np.array_equal(start, seen) for seen in unique):
            unique.append(start)

    problem = _Problem(objective, inequality, lower, upper, cfg, gradient, inequality_gradient)
    best: Optional[_Run] = None
    for start in unique:
        run = _solve_from(problem, start)
        if best is None or _better(run, best, cfg.constraint_tol):
            best = run

    if best.constraint > cfg.constraint_tol:
        status: Status = "infeasible"
    elif best.stationary:
        status = "converged"
    else:
        status = "max-iters"

    return SolveResult(
        minimizer=best.z,
        objective=best.objective,
        constraint_value=best.constraint,
        status=status,
        wall_time=time.perf_counter() - started,
        outer_iterations=best.outer,
        inner_iterations=best.inner,
        projected_gradient_norm=best.pg_norm,
        violation_history=best.history,
        starts_tried=len(unique),
    )
