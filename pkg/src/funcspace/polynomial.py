"""
多変数多項式
係数と指数の組で表した多項式の評価・勾配・線形結合
"""

from itertools import combinations_with_replacement
from typing import Dict, Iterable, List, Sequence, Tuple

import numpy as np

from ..errors import DimensionError


Term = Tuple[float, Tuple[int, ...]]


def graded_lex_exponents(num_vars: int, max_degree: int) -> List[Tuple[int, ...]]:
    """
    次数付き辞書式順序の単項式指数を列挙

    例: 2変数, 次数2 → 1, x1, x2, x1^2, x1*x2, x2^2

    Args:
        num_vars: 変数の数
        max_degree: 最大次数

    Returns:
        指数タプルのリスト
    """
    exponents = []
    for degree in range(max_degree + 1):
        for combo in combinations_with_replacement(range(num_vars), degree):
            exps = [0] * num_vars
            for var in combo:
                exps[var] += 1
            exponents.append(tuple(exps))
    return exponents


class Polynomial:
    """実係数の多変数多項式（不変オブジェクト）"""

    def __init__(self, num_vars: int, terms: Iterable[Term]):
        if num_vars < 1:
            raise DimensionError(f"num_vars は正の整数が必要です: {num_vars}")

        # 同じ指数の項をまとめる
        merged: Dict[Tuple[int, ...], float] = {}
        for coefficient, exponents in terms:
            exps = tuple(int(e) for e in exponents)
            if len(exps) != num_vars:
                raise DimensionError(
                    f"指数の長さ {len(exps)} が変数の数 {num_vars} と一致しません"
                )
            if any(e < 0 for e in exps):
                raise ValueError(f"指数は非負である必要があります: {exps}")
            merged[exps] = merged.get(exps, 0.0) + float(coefficient)

        self.num_vars = num_vars
        self.terms: List[Term] = [(c, e) for e, c in merged.items() if c != 0.0]

        self._coefficients = np.array([c for c, _ in self.terms], dtype=float)
        self._exponents = np.array(
            [e for _, e in self.terms], dtype=float
        ).reshape(len(self.terms), num_vars)

    @classmethod
    def from_dense(cls, num_vars: int, coefficients: Sequence[float]) -> 'Polynomial':
        """
        次数付き辞書式順序の密な係数配列から生成

        Args:
            num_vars: 変数の数
            coefficients: 単項式 1, x1, ..., xn, x1^2, ... の順の係数

        Returns:
            Polynomialインスタンス
        """
        coefficients = list(coefficients)
        degree = 0
        exponents = graded_lex_exponents(num_vars, degree)
        while len(exponents) < len(coefficients):
            degree += 1
            exponents = graded_lex_exponents(num_vars, degree)
        if len(exponents) != len(coefficients):
            raise DimensionError(
                f"係数の個数 {len(coefficients)} は {num_vars} 変数の"
                f"完全な次数付き基底の大きさと一致しません"
            )
        return cls(num_vars, zip(coefficients, exponents))

    @classmethod
    def quadratic_form(cls, matrix, offset: float = 0.0) -> 'Polynomial':
        """x^T M x + offset を生成"""
        matrix = np.asarray(matrix, dtype=float)
        n = matrix.shape[0]
        terms: List[Term] = [(offset, (0,) * n)]
        for i in range(n):
            for j in range(n):
                exps = [0] * n
                exps[i] += 1
                exps[j] += 1
                terms.append((matrix[i, j], tuple(exps)))
        return cls(n, terms)

    @classmethod
    def constant(cls, num_vars: int, value: float) -> 'Polynomial':
        return cls(num_vars, [(value, (0,) * num_vars)])

    @property
    def degree(self) -> int:
        if not self.terms:
            return 0
        return int(self._exponents.sum(axis=1).max())

    def _check_points(self, points) -> np.ndarray:
        points = np.asarray(points, dtype=float)
        if points.ndim != 2 or points.shape[1] != self.num_vars:
            raise DimensionError(
                f"評価点の形状 {points.shape} は (N, {self.num_vars}) である必要があります"
            )
        return points

    def _monomials(self, points: np.ndarray) -> np.ndarray:
        # (N, 項数)
        return np.prod(points[:, None, :] ** self._exponents[None, :, :], axis=2)

    def eval_batch(self, points) -> np.ndarray:
        """
        複数点で評価

        Args:
            points: (N, num_vars) の配列

        Returns:
            (N,) の値
        """
        points = self._check_points(points)
        if not self.terms:
            return np.zeros(points.shape[0])
        return self._monomials(points) @ self._coefficients

    def eval(self, x) -> float:
        x = np.asarray(x, dtype=float).reshape(1, -1)
        return float(self.eval_batch(x)[0])

    def gradient_batch(self, points) -> np.ndarray:
        """
        複数点での勾配

        Args:
            points: (N, num_vars) の配列

        Returns:
            (N, num_vars) の勾配
        """
        points = self._check_points(points)
        grads = np.zeros_like(points)
        if not self.terms:
            return grads
        for var in range(self.num_vars):
            powers = self._exponents[:, var]
            lowered = self._exponents.copy()
            lowered[:, var] = np.maximum(powers - 1.0, 0.0)
            mono = np.prod(points[:, None, :] ** lowered[None, :, :], axis=2)
            grads[:, var] = mono @ (self._coefficients * powers)
        return grads

    def gradient(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float).reshape(1, -1)
        return self.gradient_batch(x)[0]

    def __add__(self, other: 'Polynomial') -> 'Polynomial':
        if not isinstance(other, Polynomial):
            return NotImplemented
        if other.num_vars != self.num_vars:
            raise DimensionError("変数の数が異なる多項式は加算できません")
        return Polynomial(self.num_vars, list(self.terms) + list(other.terms))

    def __sub__(self, other: 'Polynomial') -> 'Polynomial':
        return self + other.scale(-1.0)

    def scale(self, factor: float) -> 'Polynomial':
        return Polynomial(self.num_vars, [(c * factor, e) for c, e in self.terms])

    def __mul__(self, factor: float) -> 'Polynomial':
        return self.scale(float(factor))

    __rmul__ = __mul__

    def to_terms(self) -> List[list]:
        """シリアライズ用の [[係数, [指数...]], ...] 表現"""
        return [[c, list(e)] for c, e in self.terms]

    @classmethod
    def from_terms(cls, num_vars: int, data: Sequence) -> 'Polynomial':
        return cls(num_vars, [(c, tuple(e)) for c, e in data])

    def __repr__(self) -> str:
        return f"Polynomial(num_vars={self.num_vars}, terms={len(self.terms)})"
