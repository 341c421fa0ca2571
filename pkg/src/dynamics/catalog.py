"""
組み込みの制御系カタログ
Van-der-Pol 振動子・スカラー積分器・二重積分器
"""

from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from ..errors import ConfigError
from ..funcspace.polynomial import Polynomial
from .system import ControlSystem


# 終端楕円 xᵀPx <= 1 の行列
VDP_TERMINAL_P = np.array([[6.4314, 0.4580],
                           [0.4580, 5.8227]])


def make_vdp(mu: float = 1.0, input_gain: float = 1.0, step_size: float = 0.1) -> ControlSystem:
    """
    強制 Van-der-Pol 振動子

    dx1/dt = x2
    dx2/dt = mu (1 - x1^2) x2 - x1 + input_gain * u

    Args:
        mu: 減衰係数（モデルは 1、プラント誤差の再現に変更可）
        input_gain: 入力ゲイン
        step_size: 離散化刻み [s]

    Returns:
        ControlSystem
    """
    # 変数順は (x1, x2, u)
    f1 = Polynomial(3, [(1.0, (0, 1, 0))])
    f2 = Polynomial(3, [
        (mu, (0, 1, 0)),
        (-mu, (2, 1, 0)),
        (-1.0, (1, 0, 0)),
        (input_gain, (0, 0, 1)),
    ])
    # 1 - x1^2 - 3 x2^2 >= 0 を符号反転
    g = Polynomial(2, [(1.0, (2, 0)), (3.0, (0, 2)), (-1.0, (0, 0))])
    l = Polynomial.quadratic_form(VDP_TERMINAL_P, offset=-1.0)
    return ControlSystem(
        name="vdp",
        state_dim=2,
        input_dim=1,
        vector_field=(f1, f2),
        input_lower=np.array([-1.0]),
        input_upper=np.array([1.0]),
        state_constraint=g,
        terminal_constraint=l,
        step_size=step_size,
        params={"mu": mu, "input_gain": input_gain},
    )


def make_scalar_integrator(
    state_bound: float = 1.0,
    terminal_bound: float = 0.1,
    step_size: float = 0.1,
) -> ControlSystem:
    """
    スカラー積分器 dx/dt = u, |u| <= 1

    状態制約 [-state_bound, state_bound]、終端集合 [-terminal_bound, terminal_bound]
    """
    f = Polynomial(2, [(1.0, (0, 1))])
    g = Polynomial(1, [(1.0, (2,)), (-state_bound ** 2, (0,))])
    l = Polynomial(1, [(1.0, (2,)), (-terminal_bound ** 2, (0,))])
    return ControlSystem(
        name="scalar_integrator",
        state_dim=1,
        input_dim=1,
        vector_field=(f,),
        input_lower=np.array([-1.0]),
        input_upper=np.array([1.0]),
        state_constraint=g,
        terminal_constraint=l,
        step_size=step_size,
        params={"state_bound": state_bound, "terminal_bound": terminal_bound},
    )


def make_double_integrator(terminal_radius: float = 0.2, step_size: float = 0.1) -> ControlSystem:
    """二重積分器 dx1/dt = x2, dx2/dt = u（単位円内の状態制約）"""
    f1 = Polynomial(3, [(1.0, (0, 1, 0))])
    f2 = Polynomial(3, [(1.0, (0, 0, 1))])
    g = Polynomial.quadratic_form(np.eye(2), offset=-1.0)
    l = Polynomial.quadratic_form(np.eye(2), offset=-terminal_radius ** 2)
    return ControlSystem(
        name="double_integrator",
        state_dim=2,
        input_dim=1,
        vector_field=(f1, f2),
        input_lower=np.array([-1.0]),
        input_upper=np.array([1.0]),
        state_constraint=g,
        terminal_constraint=l,
        step_size=step_size,
        params={"terminal_radius": terminal_radius},
    )


CATALOG: Dict[str, Callable[..., ControlSystem]] = {
    "vdp": make_vdp,
    "scalar_integrator": make_scalar_integrator,
    "double_integrator": make_double_integrator,
}


def make_system(name: str, **params) -> ControlSystem:
    """
    カタログ名から制御系を生成

    Args:
        name: カタログ名
        **params: コンストラクタ引数（mu, step_size など）

    Returns:
        ControlSystem
    """
    if name not in CATALOG:
        raise ConfigError(f"未知の制御系です: {name}（利用可能: {', '.join(sorted(CATALOG))}）")
    try:
        return CATALOG[name](**params)
    except TypeError as e:
        raise ConfigError(f"制御系 {name} のパラメータが不正です: {e}") from None


def system_from_polynomials(
    state_dim: int,
    input_dim: int,
    vector_field: Sequence[Sequence[float]],
    state_constraint: Sequence[float],
    terminal_constraint: Sequence[float],
    input_box: Sequence[Sequence[float]],
    step_size: float,
    name: str = "polynomial",
) -> ControlSystem:
    """
    次数付き辞書式順序の密な係数配列から制御系を生成

    Args:
        vector_field: 状態成分ごとの (x, u) 多項式係数
        state_constraint: ĝ(x) の係数（<= 0 で実行可能）
        terminal_constraint: l̂(x) の係数（<= 0 で終端集合内）
        input_box: 入力成分ごとの [下限, 上限]
    """
    components: List[Polynomial] = [
        Polynomial.from_dense(state_dim + input_dim, coeffs) for coeffs in vector_field
    ]
    box = np.asarray(input_box, dtype=float).reshape(input_dim, 2)
    return ControlSystem(
        name=name,
        state_dim=state_dim,
        input_dim=input_dim,
        vector_field=tuple(components),
        input_lower=box[:, 0],
        input_upper=box[:, 1],
        state_constraint=Polynomial.from_dense(state_dim, state_constraint),
        terminal_constraint=Polynomial.from_dense(state_dim, terminal_constraint),
        step_size=step_size,
    )


def with_input_box(sys: ControlSystem, input_box: Optional[Sequence[Sequence[float]]] = None,
                   step_size: Optional[float] = None) -> ControlSystem:
    """入力箱や刻み幅だけを差し替えた制御系"""
    if input_box is None and step_size is None:
        return sys
    lower, upper = sys.input_lower, sys.input_upper
    if input_box is not None:
        box = np.asarray(input_box, dtype=float).reshape(sys.input_dim, 2)
        lower, upper = box[:, 0], box[:, 1]
    return ControlSystem(
        name=sys.name,
        state_dim=sys.state_dim,
        input_dim=sys.input_dim,
        vector_field=sys.vector_field,
        input_lower=lower,
        input_upper=upper,
        state_constraint=sys.state_constraint,
        terminal_constraint=sys.terminal_constraint,
        step_size=sys.step_size if step_size is None else step_size,
        params=sys.params,
    )
