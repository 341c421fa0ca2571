"""
格子補間関数
一様格子上の値表を多重線形補間で評価する（箱の外は境界へクランプ）
"""

from dataclasses import dataclass
from itertools import product
from typing import List, Sequence, Tuple

import numpy as np

from ..errors import DimensionError, NumericError


Axis = Tuple[float, float, int]

# 格子点上の座標をこの誤差以内で丸め、節点値をそのまま再現する
_NODE_SNAP = 1e-9


@dataclass
class InterpolationPlan:
    """
    固定された評価点集合に対する補間の重みと添字

    DP のように同じ後続状態を何度も評価する場合に使い回す
    """
    indices: np.ndarray      # (N, 2^n) 平坦化した格子添字
    weights: np.ndarray      # (N, 2^n) 多重線形重み
    outside: np.ndarray      # (N,) 箱の外までの距離（内側は 0）

    @property
    def extrapolated(self) -> np.ndarray:
        return self.outside > 0.0

    def apply(self, flat_values: np.ndarray) -> np.ndarray:
        """クランプ補間値（外挿フラグは outside で判定）"""
        return np.einsum('ij,ij->i', flat_values[self.indices], self.weights)

    def penalized(self, flat_values: np.ndarray) -> np.ndarray:
        """
        箱の外の点に正の値を割り当てた補間値

        外側: max(クランプ値, 0) + 箱までの距離
        """
        values = self.apply(flat_values)
        outside = self.extrapolated
        if np.any(outside):
            values = values.copy()
            values[outside] = np.maximum(values[outside], 0.0) + self.outside[outside]
        return values


class GridFunction:
    """一様格子上の関数（値は行優先で保持）"""

    def __init__(self, axes: Sequence[Axis], values):
        self.axes: List[Axis] = []
        for lower, upper, count in axes:
            lower, upper, count = float(lower), float(upper), int(count)
            if count < 2:
                raise ValueError(f"格子点数は 2 以上が必要です: {count}")
            if not lower < upper:
                raise ValueError(f"格子の下限 {lower} は上限 {upper} より小さい必要があります")
            self.axes.append((lower, upper, count))

        self.shape = tuple(count for _, _, count in self.axes)
        values = np.asarray(values, dtype=float)
        if values.size != int(np.prod(self.shape)):
            raise DimensionError(
                f"値の個数 {values.size} が格子 {self.shape} と一致しません"
            )
        if not np.all(np.isfinite(values)):
            raise NumericError("格子値に非有限値が含まれています")
        self.values = values.reshape(self.shape)
        self.values.setflags(write=False)

        self._lower = np.array([a[0] for a in self.axes])
        self._upper = np.array([a[1] for a in self.axes])
        self._counts = np.array(self.shape)
        self._steps = (self._upper - self._lower) / (self._counts - 1)
        self._strides = np.array(
            [int(np.prod(self.shape[d + 1:])) for d in range(self.num_vars)]
        )
        self._corners = np.array(list(product((0, 1), repeat=self.num_vars)))

    @property
    def num_vars(self) -> int:
        return len(self.axes)

    @property
    def flat_values(self) -> np.ndarray:
        return self.values.ravel()

    @property
    def cell_sizes(self) -> np.ndarray:
        return self._steps.copy()

    @property
    def lower(self) -> np.ndarray:
        return self._lower.copy()

    @property
    def upper(self) -> np.ndarray:
        return self._upper.copy()

    def axis_points(self) -> List[np.ndarray]:
        return [np.linspace(lo, hi, n) for lo, hi, n in self.axes]

    def grid_points(self) -> np.ndarray:
        """全格子点を行優先順に並べた (N, n) 配列"""
        mesh = np.meshgrid(*self.axis_points(), indexing='ij')
        return np.stack([m.ravel() for m in mesh], axis=1)

    def with_values(self, values) -> 'GridFunction':
        return GridFunction(self.axes, values)

    def same_grid(self, other: 'GridFunction') -> bool:
        return isinstance(other, GridFunction) and self.axes == other.axes

    def lipschitz_bound(self) -> float:
        """隣接格子点間の差分から見積もった Lipschitz 定数"""
        bound = 0.0
        for d in range(self.num_vars):
            diffs = np.abs(np.diff(self.values, axis=d)) / self._steps[d]
            if diffs.size:
                bound = max(bound, float(diffs.max()))
        return bound

    def _cells(self, points: np.ndarray):
        points = np.asarray(points, dtype=float)
        if points.ndim != 2 or points.shape[1] != self.num_vars:
            raise DimensionError(
                f"評価点の形状 {points.shape} は (N, {self.num_vars}) である必要があります"
            )
        clipped = np.clip(points, self._lower, self._upper)
        outside = np.linalg.norm(points - clipped, axis=1)

        scaled = (clipped - self._lower) / self._steps
        nearest = np.rint(scaled)
        scaled = np.where(np.abs(scaled - nearest) < _NODE_SNAP, nearest, scaled)

        base = np.clip(np.floor(scaled), 0, self._counts - 2).astype(int)
        frac = scaled - base
        return points, clipped, outside, base, frac

    def plan(self, points) -> InterpolationPlan:
        """評価点集合に対する補間プランを作成"""
        _, _, outside, base, frac = self._cells(points)
        corner_idx = base[:, None, :] + self._corners[None, :, :]
        indices = corner_idx @ self._strides
        weights = np.prod(
            np.where(self._corners[None, :, :] == 1, frac[:, None, :], 1.0 - frac[:, None, :]),
            axis=2,
        )
        return InterpolationPlan(indices, weights, outside)

    def evaluate(self, points) -> Tuple[np.ndarray, np.ndarray]:
        """
        複数点を評価

        Args:
            points: (N, n) の配列

        Returns:
            (値, 外挿フラグ) のタプル
        """
        plan = self.plan(points)
        return plan.apply(self.flat_values), plan.extrapolated

    def eval_batch(self, points) -> np.ndarray:
        return self.evaluate(points)[0]

    def eval(self, x) -> float:
        x = np.asarray(x, dtype=float).reshape(1, -1)
        return float(self.eval_batch(x)[0])

    def value_and_gradient(self, points):
        """
        補間値とセル内勾配

        箱の外でクランプされた座標方向の勾配は 0 とする

        Returns:
            (値 (N,), 勾配 (N, n), 外挿フラグ (N,))
        """
        points, clipped, outside, base, frac = self._cells(points)
        flat = self.flat_values
        n = self.num_vars

        values = np.zeros(points.shape[0])
        grads = np.zeros_like(points)
        for corner in self._corners:
            idx = (base + corner) @ self._strides
            corner_values = flat[idx]
            factors = np.where(corner == 1, frac, 1.0 - frac)
            values += corner_values * np.prod(factors, axis=1)
            for d in range(n):
                others = np.prod(np.delete(factors, d, axis=1), axis=1) if n > 1 else 1.0
                sign = 1.0 if corner[d] == 1 else -1.0
                grads[:, d] += sign * corner_values * others / self._steps[d]

        clamped = (points != clipped)
        grads[clamped] = 0.0
        return values, grads, outside > 0.0

    def __repr__(self) -> str:
        return f"GridFunction(shape={self.shape})"
