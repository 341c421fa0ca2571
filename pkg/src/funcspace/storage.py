"""
蓄積関数ファミリー V(t, x)
段ごとの多項式または格子関数を束ね、評価とファイル入出力を提供する
"""

import json
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Union

import numpy as np

from ..errors import DimensionError
from .grid import GridFunction
from .polynomial import Polynomial


StageFunction = Union[Polynomial, GridFunction]

STORAGE_FORMAT = "onestep-storage/1"


def eval_function(fn: StageFunction, x) -> float:
    """多項式または格子関数を 1 点で評価"""
    x = np.asarray(x, dtype=float).ravel()
    if x.size != fn.num_vars:
        raise DimensionError(f"状態の次元 {x.size} が関数の変数の数 {fn.num_vars} と一致しません")
    return fn.eval(x)


class StorageFunction:
    """
    時間添字付きの蓄積関数 V(0,·) ... V(T,·)

    0 部分レベル集合 {x : V(t,x) <= 0} が到達可能集合の内近似を与える
    """

    def __init__(
        self,
        stages: Sequence[StageFunction],
        horizon: Optional[int] = None,
        meta: Optional[Dict[str, Any]] = None,
    ):
        stages = list(stages)
        if horizon is None:
            horizon = len(stages) - 1
        if horizon < 1:
            raise ValueError(f"horizon は正の整数が必要です: {horizon}")
        if len(stages) != horizon + 1:
            raise ValueError(
                f"段の数 {len(stages)} は horizon + 1 = {horizon + 1} と一致する必要があります"
            )

        first = stages[0]
        for stage in stages[1:]:
            if type(stage) is not type(first):
                raise TypeError("全ての段は同じ種類の関数である必要があります")
            if stage.num_vars != first.num_vars:
                raise DimensionError("全ての段は同じ変数の数を持つ必要があります")
            if isinstance(first, GridFunction) and not first.same_grid(stage):
                raise DimensionError("全ての段は同じ格子を共有する必要があります")

        self.horizon = horizon
        self.stages: List[StageFunction] = stages
        self.meta: Dict[str, Any] = dict(meta or {})

    @property
    def num_vars(self) -> int:
        return self.stages[0].num_vars

    @property
    def kind(self) -> str:
        return "grid" if isinstance(self.stages[0], GridFunction) else "polynomial"

    @property
    def input_levels(self) -> Optional[List[int]]:
        levels = self.meta.get("input_levels")
        return None if levels is None else [int(v) for v in levels]

    @property
    def dissipation_weight(self) -> float:
        return float(self.meta.get("dissipation_weight", 0.0))

    def stage(self, t: int) -> StageFunction:
        if not 0 <= t <= self.horizon:
            raise IndexError(f"段 t={t} は範囲 [0, {self.horizon}] の外です")
        return self.stages[t]

    def _points(self, points) -> np.ndarray:
        points = np.asarray(points, dtype=float)
        if points.ndim == 1:
            points = points.reshape(1, -1)
        if points.shape[1] != self.num_vars:
            raise DimensionError(
                f"状態の次元 {points.shape[1]} が蓄積関数の次元 {self.num_vars} と一致しません"
            )
        return points

    def values(self, t: int, points) -> np.ndarray:
        """V(t, x) を複数点で評価（格子は境界クランプ）"""
        return self.stage(t).eval_batch(self._points(points))

    def penalized_values(self, t: int, points) -> np.ndarray:
        """
        外挿点を実行不能として扱う評価

        格子の箱の外では max(クランプ値, 0) + 箱までの距離 を返すので、
        外挿データから部分レベル集合への所属が導かれることはない
        """
        stage = self.stage(t)
        points = self._points(points)
        if isinstance(stage, GridFunction):
            return stage.plan(points).penalized(stage.flat_values)
        return stage.eval_batch(points)

    def penalized_value_and_gradient(self, t: int, x):
        """1 点での罰則付き値と勾配"""
        stage = self.stage(t)
        points = self._points(x)
        if isinstance(stage, Polynomial):
            return float(stage.eval_batch(points)[0]), stage.gradient_batch(points)[0]

        value, grad, extrapolated = stage.value_and_gradient(points)
        value, grad = float(value[0]), grad[0]
        if extrapolated[0]:
            clipped = np.clip(points[0], stage.lower, stage.upper)
            offset = points[0] - clipped
            distance = float(np.linalg.norm(offset))
            grad = (grad if value > 0.0 else np.zeros_like(grad)) + offset / distance
            value = max(value, 0.0) + distance
        return value, grad

    def contains(self, t: int, x) -> bool:
        """x が内近似 {V(t,·) <= 0} に属するか"""
        return bool(self.penalized_values(t, x)[0] <= 0.0)

    def bounding_box(self):
        """サンプリング用の箱（格子は格子の箱、多項式は meta['box']）"""
        first = self.stages[0]
        if isinstance(first, GridFunction):
            return first.lower, first.upper
        box = self.meta.get("box")
        if box is None:
            raise ValueError("多項式蓄積関数のサンプリングには meta['box'] が必要です")
        box = np.asarray(box, dtype=float)
        return box[:, 0], box[:, 1]

    def reversed(self) -> 'StorageFunction':
        """段の順序を反転した蓄積関数（検証の失敗経路の確認用）"""
        return StorageFunction(self.stages[::-1], self.horizon, dict(self.meta, reversed=True))

    # ------------------------------------------------------------------
    # ファイル入出力

    def to_dict(self) -> Dict[str, Any]:
        data: Dict[str, Any] = {
            "format": STORAGE_FORMAT,
            "kind": self.kind,
            "num_vars": self.num_vars,
            "horizon": self.horizon,
            "meta": self.meta,
        }
        if self.kind == "grid":
            data["axes"] = [list(axis) for axis in self.stages[0].axes]
            data["stages"] = [stage.flat_values.tolist() for stage in self.stages]
        else:
            data["stages"] = [stage.to_terms() for stage in self.stages]
        return data

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'StorageFunction':
        if data.get("format") != STORAGE_FORMAT:
            raise ValueError(f"未対応の蓄積関数フォーマットです: {data.get('format')}")
        num_vars = int(data["num_vars"])
        if data["kind"] == "grid":
            axes = [tuple(axis) for axis in data["axes"]]
            if len(axes) != num_vars:
                raise DimensionError("axes の数が num_vars と一致しません")
            stages = [GridFunction(axes, values) for values in data["stages"]]
        elif data["kind"] == "polynomial":
            stages = [Polynomial.from_terms(num_vars, terms) for terms in data["stages"]]
        else:
            raise ValueError(f"未知の kind です: {data['kind']}")
        return cls(stages, int(data["horizon"]), data.get("meta"))

    def save(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, 'w', encoding='utf-8') as f:
            json.dump(self.to_dict(), f)
        return path

    @classmethod
    def load(cls, path: Union[str, Path]) -> 'StorageFunction':
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(f"蓄積関数ファイルが見つかりません: {path}")
        with open(path, 'r', encoding='utf-8') as f:
            return cls.from_dict(json.load(f))

    def __repr__(self) -> str:
        return f"StorageFunction(kind={self.kind}, horizon={self.horizon}, num_vars={self.num_vars})"


def eval_storage(V: StorageFunction, t: int, x) -> float:
    """
    V(t, x) を評価

    Args:
        V: 蓄積関数
        t: 段添字 (0 <= t <= T)
        x: 状態ベクトル

    Returns:
        V(t, x)
    """
    return float(V.values(t, np.asarray(x, dtype=float).reshape(1, -1))[0])
