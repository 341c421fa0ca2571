"""
制御系の定義と離散化
多項式ベクトル場・制約関数・固定刻み RK4 による離散写像
"""

from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy import linalg

from ..errors import DimensionError, NumericError
from ..funcspace.polynomial import Polynomial


@dataclass(frozen=True, eq=False)
class ControlSystem:
    """
    連続時間の制御系 dx/dt = F(x, u)

    vector_field の各成分は (x, u) の n + m 変数多項式。
    制約は「値 <= 0 なら実行可能」の符号規約に統一する。
    """
    name: str
    state_dim: int
    input_dim: int
    vector_field: Tuple[Polynomial, ...]
    input_lower: np.ndarray
    input_upper: np.ndarray
    state_constraint: Polynomial
    terminal_constraint: Polynomial
    step_size: float
    params: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        n, m = self.state_dim, self.input_dim
        if n < 1 or m < 1:
            raise DimensionError(f"状態次元と入力次元は正の整数が必要です: n={n}, m={m}")
        if len(self.vector_field) != n:
            raise DimensionError(f"ベクトル場の成分数 {len(self.vector_field)} が状態次元 {n} と一致しません")
        for component in self.vector_field:
            if component.num_vars != n + m:
                raise DimensionError("ベクトル場の各成分は n + m 変数の多項式である必要があります")
        for constraint in (self.state_constraint, self.terminal_constraint):
            if constraint.num_vars != n:
                raise DimensionError("制約関数は n 変数の多項式である必要があります")

        lower = np.asarray(self.input_lower, dtype=float).reshape(m)
        upper = np.asarray(self.input_upper, dtype=float).reshape(m)
        if not np.all(lower < upper):
            raise ValueError(f"入力の下限は上限より小さい必要があります: {lower} / {upper}")
        if not self.step_size > 0.0:
            raise ValueError(f"刻み幅は正である必要があります: {self.step_size}")

        # frozen なので object.__setattr__ で正規化した値を格納
        lower.setflags(write=False)
        upper.setflags(write=False)
        object.__setattr__(self, 'vector_field', tuple(self.vector_field))
        object.__setattr__(self, 'input_lower', lower)
        object.__setattr__(self, 'input_upper', upper)
        object.__setattr__(self, 'step_size', float(self.step_size))

    def field_batch(self, states: np.ndarray, inputs: np.ndarray) -> np.ndarray:
        """F(x, u) を (N, n) / (N, m) の組で評価"""
        z = np.concatenate([states, inputs], axis=1)
        return np.stack([comp.eval_batch(z) for comp in self.vector_field], axis=1)

    def field_jacobian_batch(self, states: np.ndarray, inputs: np.ndarray):
        """
        F の偏微分

        Returns:
            (F (N,n), dF/dx (N,n,n), dF/du (N,n,m))
        """
        z = np.concatenate([states, inputs], axis=1)
        values = np.stack([comp.eval_batch(z) for comp in self.vector_field], axis=1)
        jac = np.stack([comp.gradient_batch(z) for comp in self.vector_field], axis=1)
        return values, jac[:, :, :self.state_dim], jac[:, :, self.state_dim:]

    def g(self, x) -> float:
        """状態制約 ĝ(x)（<= 0 で実行可能）"""
        return self.state_constraint.eval(x)

    def l(self, x) -> float:
        """終端制約 l̂(x)（<= 0 で終端集合内）"""
        return self.terminal_constraint.eval(x)

    def __repr__(self) -> str:
        return (f"ControlSystem(name={self.name!r}, n={self.state_dim}, m={self.input_dim}, "
                f"h={self.step_size})")


@dataclass(frozen=True, eq=False)
class CostWeights:
    """段コスト xᵀQx + uᵀRu と終端重み P"""
    Q: np.ndarray
    R: np.ndarray
    P: np.ndarray
    validate: bool = field(default=True, repr=False)

    def __post_init__(self):
        for name in ('Q', 'R', 'P'):
            matrix = np.atleast_2d(np.asarray(getattr(self, name), dtype=float))
            if matrix.shape[0] != matrix.shape[1]:
                raise DimensionError(f"{name} は正方行列である必要があります: {matrix.shape}")
            if self.validate:
                if not np.allclose(matrix, matrix.T):
                    raise ValueError(f"{name} は対称行列である必要があります")
                try:
                    linalg.cholesky(matrix)
                except linalg.LinAlgError:
                    raise ValueError(f"{name} は正定値である必要があります") from None
            matrix.setflags(write=False)
            object.__setattr__(self, name, matrix)
        if self.Q.shape != self.P.shape:
            raise DimensionError("Q と P の次元が一致しません")

    @property
    def state_dim(self) -> int:
        return self.Q.shape[0]

    @property
    def input_dim(self) -> int:
        return self.R.shape[0]

    def scaled(self, factor: float) -> 'CostWeights':
        """Q と R を factor 倍した重み（P はそのまま）"""
        return CostWeights(self.Q * factor, self.R * factor, self.P, validate=self.validate)


def _as_vector(value, size: int, label: str) -> np.ndarray:
    vector = np.asarray(value, dtype=float).ravel()
    if vector.size != size:
        raise DimensionError(f"{label} の次元 {vector.size} は {size} である必要があります")
    return vector


def _as_batch(values, size: int, label: str) -> np.ndarray:
    batch = np.asarray(values, dtype=float)
    if batch.ndim != 2 or batch.shape[1] != size:
        raise DimensionError(f"{label} の形状 {batch.shape} は (N, {size}) である必要があります")
    return batch


def rk4_step_batch(sys: ControlSystem, states, inputs) -> np.ndarray:
    """
    古典的 4 次 Runge-Kutta による 1 ステップ（入力は区間内で一定）

    Args:
        sys: 制御系
        states: (N, n) の状態
        inputs: (N, m) の入力

    Returns:
        (N, n) の次状態
    """
    x = _as_batch(states, sys.state_dim, "状態")
    u = _as_batch(inputs, sys.input_dim, "入力")
    if x.shape[0] != u.shape[0]:
        raise DimensionError(f"状態数 {x.shape[0]} と入力数 {u.shape[0]} が一致しません")

    h = sys.step_size
    k1 = sys.field_batch(x, u)
    k2 = sys.field_batch(x + 0.5 * h * k1, u)
    k3 = sys.field_batch(x + 0.5 * h * k2, u)
    k4 = sys.field_batch(x + h * k3, u)
    result = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)

    finite = np.all(np.isfinite(result), axis=1)
    if not np.all(finite):
        bad = int(np.argmin(finite))
        raise NumericError(
            "RK4 ステップで非有限値が発生しました",
            np.concatenate([x[bad], u[bad]]),
        )
    return result


def rk4_step(sys: ControlSystem, x, u) -> np.ndarray:
    """離散写像 f(x, u) を 1 点で評価"""
    x = _as_vector(x, sys.state_dim, "状態")
    u = _as_vector(u, sys.input_dim, "入力")
    return rk4_step_batch(sys, x[None, :], u[None, :])[0]


def rk4_step_with_jacobian_batch(sys: ControlSystem, states, inputs):
    """
    RK4 ステップとその感度行列

    各段の微分を連鎖律で伝播するので、離散写像の厳密なヤコビアンになる

    Returns:
        (次状態 (N,n), df/dx (N,n,n), df/du (N,n,m))
    """
    x = _as_batch(states, sys.state_dim, "状態")
    u = _as_batch(inputs, sys.input_dim, "入力")
    n = sys.state_dim
    h = sys.step_size
    eye = np.broadcast_to(np.eye(n), (x.shape[0], n, n))

    k1, a1, b1 = sys.field_jacobian_batch(x, u)
    dk1_dx, dk1_du = a1, b1

    k2, a2, b2 = sys.field_jacobian_batch(x + 0.5 * h * k1, u)
    dk2_dx = a2 @ (eye + 0.5 * h * dk1_dx)
    dk2_du = a2 @ (0.5 * h * dk1_du) + b2

    k3, a3, b3 = sys.field_jacobian_batch(x + 0.5 * h * k2, u)
    dk3_dx = a3 @ (eye + 0.5 * h * dk2_dx)
    dk3_du = a3 @ (0.5 * h * dk2_du) + b3

    k4, a4, b4 = sys.field_jacobian_batch(x + h * k3, u)
    dk4_dx = a4 @ (eye + h * dk3_dx)
    dk4_du = a4 @ (h * dk3_du) + b4

    result = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    jac_x = eye + (h / 6.0) * (dk1_dx + 2.0 * dk2_dx + 2.0 * dk3_dx + dk4_dx)
    jac_u = (h / 6.0) * (dk1_du + 2.0 * dk2_du + 2.0 * dk3_du + dk4_du)

    if not np.all(np.isfinite(result)):
        bad = int(np.argmin(np.all(np.isfinite(result), axis=1)))
        raise NumericError("RK4 ステップで非有限値が発生しました", np.concatenate([x[bad], u[bad]]))
    return result, jac_x, jac_u


def step_jacobian(sys: ControlSystem, x, u):
    """1 点での (f(x,u), df/dx, df/du)"""
    x = _as_vector(x, sys.state_dim, "状態")
    u = _as_vector(u, sys.input_dim, "入力")
    result, jac_x, jac_u = rk4_step_with_jacobian_batch(sys, x[None, :], u[None, :])
    return result[0], jac_x[0], jac_u[0]


def simulate(sys: ControlSystem, x0, inputs: Sequence) -> np.ndarray:
    """入力列を開ループで適用した状態列 (len(inputs)+1, n)"""
    states: List[np.ndarray] = [_as_vector(x0, sys.state_dim, "初期状態")]
    for u in inputs:
        states.append(rk4_step(sys, states[-1], u))
    return np.array(states)


def stage_cost_batch(weights: CostWeights, states, inputs) -> np.ndarray:
    x = _as_batch(states, weights.state_dim, "状態")
    u = _as_batch(inputs, weights.input_dim, "入力")
    return np.einsum('ni,ij,nj->n', x, weights.Q, x) + np.einsum('ni,ij,nj->n', u, weights.R, u)


def stage_cost(weights: CostWeights, x, u) -> float:
    """
    段コスト W(x, u) = xᵀQx + uᵀRu

    Args:
        weights: コスト重み
        x: 状態ベクトル
        u: 入力ベクトル

    Returns:
        非負の実数
    """
    x = _as_vector(x, weights.state_dim, "状態")
    u = _as_vector(u, weights.input_dim, "入力")
    return float(x @ weights.Q @ x + u @ weights.R @ u)


def terminal_cost(weights: CostWeights, x) -> float:
    x = _as_vector(x, weights.state_dim, "状態")
    return float(x @ weights.P @ x)


def input_lattice(sys: ControlSystem, levels: Optional[Sequence[int]] = None) -> np.ndarray:
    """
    入力箱の一様格子（端点を含む）

    Args:
        sys: 制御系
        levels: 入力成分ごとの分割数（省略時は各 21）

    Returns:
        (L, m) の入力候補
    """
    if levels is None:
        levels = [21] * sys.input_dim
    levels = list(levels)
    if len(levels) == 1 and sys.input_dim > 1:
        levels = levels * sys.input_dim
    if len(levels) != sys.input_dim:
        raise DimensionError(f"入力分割数の個数 {len(levels)} が入力次元 {sys.input_dim} と一致しません")
    if any(count < 2 for count in levels):
        raise ValueError(f"入力分割数は 2 以上が必要です: {levels}")

    axes = [np.linspace(lo, hi, count)
            for lo, hi, count in zip(sys.input_lower, sys.input_upper, levels)]
    mesh = np.meshgrid(*axes, indexing='ij')
    return np.stack([m.ravel() for m in mesh], axis=1)
