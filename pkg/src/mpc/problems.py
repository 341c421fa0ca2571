"""
MPC の最適化問題
一段最適化（蓄積関数で先読みを置き換える）と全ホライズン最適制御問題
"""

from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np
from scipy.special import logsumexp, softmax

from ..dynamics.system import (
    ControlSystem,
    CostWeights,
    rk4_step,
    rk4_step_with_jacobian_batch,
    step_jacobian,
)
from ..errors import DimensionError, InfeasibleInputError
from ..funcspace.storage import StorageFunction
from ..nlpsolve.solver import SolveResult, SolverConfig, minimize
from ..synth.verification import select_viable_input


# 経路制約の log-sum-exp 平滑化の鋭さ
LSE_SHARPNESS = 100.0


def _state(x, sys: ControlSystem) -> np.ndarray:
    x = np.asarray(x, dtype=float).ravel()
    if x.size != sys.state_dim:
        raise DimensionError(f"初期状態の次元 {x.size} が状態次元 {sys.state_dim} と一致しません")
    return x


@dataclass(eq=False)
class OneStepProblem:
    """
    一段最適化問題

        min_u  α V(1, f(x0, u)) + W(x0, u)
        s.t.   V(1, f(x0, u)) <= 0,  u ∈ 𝒰

    x₊ = f(x0, u) は代入で消去するので決定変数は入力 u のみ
    """
    sys: ControlSystem
    V: StorageFunction
    weights: CostWeights
    alpha: float
    x0: np.ndarray
    _cache_key: Optional[bytes] = field(default=None, init=False, repr=False)
    _cache: Optional[tuple] = field(default=None, init=False, repr=False)

    def __post_init__(self):
        if not self.alpha > 0.0:
            raise ValueError(f"alpha は正である必要があります: {self.alpha}")
        if self.V.horizon < 2:
            raise ValueError(f"蓄積関数の horizon は 2 以上が必要です: {self.V.horizon}")
        if self.V.num_vars != self.sys.state_dim:
            raise DimensionError("蓄積関数の次元が状態次元と一致しません")
        self.x0 = _state(self.x0, self.sys)

    def _evaluate(self, u: np.ndarray):
        """(x₊, V(1,x₊), ∂V(1,x₊)/∂u) を直前の u についてキャッシュ"""
        u = np.asarray(u, dtype=float).ravel()
        key = u.tobytes()
        if key != self._cache_key:
            x_plus, _, jac_u = step_jacobian(self.sys, self.x0, u)
            value, grad_x = self.V.penalized_value_and_gradient(1, x_plus)
            self._cache = (x_plus, value, grad_x @ jac_u)
            self._cache_key = key
        return self._cache

    def successor(self, u) -> np.ndarray:
        return self._evaluate(u)[0]

    def stage_cost(self, u) -> float:
        u = np.asarray(u, dtype=float).ravel()
        return float(self.x0 @ self.weights.Q @ self.x0 + u @ self.weights.R @ u)

    def objective(self, u) -> float:
        _, value, _ = self._evaluate(u)
        return self.alpha * value + self.stage_cost(u)

    def objective_gradient(self, u) -> np.ndarray:
        u = np.asarray(u, dtype=float).ravel()
        _, _, grad = self._evaluate(u)
        return self.alpha * grad + 2.0 * self.weights.R @ u

    def constraint(self, u) -> float:
        return self._evaluate(u)[1]

    def constraint_gradient(self, u) -> np.ndarray:
        return self._evaluate(u)[2]


def solve_one_step(
    p: OneStepProblem,
    cfg: Optional[SolverConfig] = None,
    warm_start=None,
    use_lattice: bool = True,
) -> Tuple[np.ndarray, np.ndarray, SolveResult]:
    """
    一段最適化を解く

    初期点は入力箱の格子・前ステップの入力・実行可能入力 h_U(0, x0)。
    V(0, x0) > 0 で実行可能入力が選べない場合はそれを省く。

    Returns:
        (u*, x₊ = f(x0, u*), SolveResult)。実行不能は status で返す
    """
    cfg = cfg or SolverConfig()
    starts = []
    if warm_start is not None:
        starts.append(np.asarray(warm_start, dtype=float).ravel())
    try:
        starts.append(select_viable_input(p.sys, p.V, 0, p.x0))
    except InfeasibleInputError:
        pass

    result = minimize(
        p.objective,
        p.constraint,
        p.sys.input_lower,
        p.sys.input_upper,
        cfg,
        starts=starts,
        gradient=p.objective_gradient,
        inequality_gradient=p.constraint_gradient,
        use_lattice=use_lattice,
    )
    u = result.minimizer
    return u, rk4_step(p.sys, p.x0, u), result


@dataclass(eq=False)
class FullHorizonProblem:
    """
    全ホライズン最適制御問題（単一シューティング）

        min  x_Tᵀ P x_T + Σ_{t<T} W(x_t, u_t)
        s.t. ĝ(x_t) <= 0 (t = 1..T),  l̂(x_T) <= 0,  u_t ∈ 𝒰

    決定変数は (u_0, ..., u_{T-1}) を平坦化したベクトル
    """
    sys: ControlSystem
    weights: CostWeights
    horizon: int
    x0: np.ndarray
    sharpness: float = LSE_SHARPNESS
    _cache_key: Optional[bytes] = field(default=None, init=False, repr=False)
    _cache: Optional[tuple] = field(default=None, init=False, repr=False)

    def __post_init__(self):
        if self.horizon < 2:
            raise ValueError(f"horizon は 2 以上が必要です: {self.horizon}")
        self.x0 = _state(self.x0, self.sys)

    @property
    def num_decisions(self) -> int:
        return self.horizon * self.sys.input_dim

    def bounds(self) -> Tuple[np.ndarray, np.ndarray]:
        return (np.tile(self.sys.input_lower, self.horizon),
                np.tile(self.sys.input_upper, self.horizon))

    def inputs_of(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=float).ravel()
        if z.size != self.num_decisions:
            raise DimensionError(f"決定変数の次元 {z.size} は {self.num_decisions} である必要があります")
        return z.reshape(self.horizon, self.sys.input_dim)

    def rollout(self, z):
        """状態列 (T+1, n) と各ステップの感度行列 A_t, B_t"""
        key = np.asarray(z, dtype=float).tobytes()
        if key != self._cache_key:
            inputs = self.inputs_of(z)
            n = self.sys.state_dim
            states = np.empty((self.horizon + 1, n))
            jac_x = np.empty((self.horizon, n, n))
            jac_u = np.empty((self.horizon, n, self.sys.input_dim))
            states[0] = self.x0
            for t in range(self.horizon):
                nxt, a, b = rk4_step_with_jacobian_batch(self.sys, states[t][None, :], inputs[t][None, :])
                states[t + 1], jac_x[t], jac_u[t] = nxt[0], a[0], b[0]
            self._cache = (inputs, states, jac_x, jac_u)
            self._cache_key = key
        return self._cache

    def objective(self, z) -> float:
        inputs, states, _, _ = self.rollout(z)
        w = self.weights
        x, xt = states[:-1], states[-1]
        running = np.einsum('ti,ij,tj->', x, w.Q, x) + np.einsum('ti,ij,tj->', inputs, w.R, inputs)
        return float(xt @ w.P @ xt + running)

    def objective_gradient(self, z) -> np.ndarray:
        """随伴法による厳密な勾配"""
        inputs, states, jac_x, jac_u = self.rollout(z)
        w = self.weights
        grad = np.empty_like(inputs)
        adjoint = 2.0 * w.P @ states[-1]
        for t in range(self.horizon - 1, -1, -1):
            grad[t] = 2.0 * w.R @ inputs[t] + jac_u[t].T @ adjoint
            adjoint = 2.0 * w.Q @ states[t] + jac_x[t].T @ adjoint
        return grad.ravel()

    def constraint_terms(self, z) -> np.ndarray:
        """[ĝ(x_1), ..., ĝ(x_T), l̂(x_T)]"""
        _, states, _, _ = self.rollout(z)
        path = self.sys.state_constraint.eval_batch(states[1:])
        terminal = self.sys.terminal_constraint.eval_batch(states[-1:])
        return np.concatenate([path, terminal])

    def max_violation(self, z) -> float:
        """平滑化しない最大値（報告用）"""
        return float(np.max(self.constraint_terms(z)))

    def constraint(self, z) -> float:
        """log-sum-exp で平滑化した最大値（真の最大値以上）"""
        beta = self.sharpness
        return float(logsumexp(beta * self.constraint_terms(z)) / beta)

    def constraint_gradient(self, z) -> np.ndarray:
        _, states, jac_x, jac_u = self.rollout(z)
        weights = softmax(self.sharpness * self.constraint_terms(z))
        path_grad = self.sys.state_constraint.gradient_batch(states[1:]) * weights[:-1, None]
        terminal_grad = self.sys.terminal_constraint.gradient_batch(states[-1:])[0] * weights[-1]

        grad = np.empty((self.horizon, self.sys.input_dim))
        adjoint = path_grad[-1] + terminal_grad
        for t in range(self.horizon - 1, -1, -1):
            grad[t] = jac_u[t].T @ adjoint
            # path_grad[t-1] は x_t に対応（x_0 は固定）
            adjoint = jac_x[t].T @ adjoint + (path_grad[t - 1] if t >= 1 else 0.0)
        return grad.ravel()


def solve_full_horizon(
    p: FullHorizonProblem,
    cfg: Optional[SolverConfig] = None,
    warm_start=None,
    use_lattice: bool = True,
) -> Tuple[np.ndarray, SolveResult]:
    """
    全ホライズン問題を解く

    初期点は（use_lattice なら）対角線上の定数入力列・ウォームスタート・ゼロ入力列。
    結果の constraint_value は平滑化しない真の最大値に置き換える。

    Returns:
        ((T, m) の入力列, SolveResult)
    """
    cfg = cfg or SolverConfig()
    starts = [np.zeros(p.num_decisions)]
    if warm_start is not None:
        starts.insert(0, np.asarray(warm_start, dtype=float).ravel())
    lower, upper = p.bounds()
    result = minimize(
        p.objective,
        p.constraint,
        lower,
        upper,
        cfg,
        starts=starts,
        gradient=p.objective_gradient,
        inequality_gradient=p.constraint_gradient,
        use_lattice=use_lattice,
    )
    # 平滑化値は真の最大値の上界なので、実行可能判定はそのまま有効
    result.constraint_value = p.max_violation(result.minimizer)
    return p.inputs_of(result.minimizer), result
