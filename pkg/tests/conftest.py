"""
テスト共通のフィクスチャ
小さな格子で合成した蓄積関数をセッション単位で共有する
"""

import sys
from pathlib import Path

import numpy as np
import pytest

# プロジェクトルートをパスに追加
ROOT = Path(__file__).resolve().parents[1]
sys.path.insert(0, str(ROOT))

from src.dynamics import CostWeights, make_scalar_integrator, make_vdp  # noqa: E402
from src.dynamics.catalog import VDP_TERMINAL_P  # noqa: E402
from src.synth import SynthConfig, synthesize_storage  # noqa: E402


INTEGRATOR_HORIZON = 5
INTEGRATOR_GRID = (-1.0, 1.0, 201)
INTEGRATOR_MARGIN = 1e-3


def integrator_radius(t: int, horizon: int = INTEGRATOR_HORIZON, eps: float = INTEGRATOR_MARGIN) -> float:
    """
    スカラー積分器の後ろ向き到達区間の半径

    最大速度 0.1 で終端区間 [-0.1, 0.1] へ向かう経路に沿った段ごとのマージン
    ε + (ε s / T) x_s^2 を、終端の余裕 0.1^2 から差し引く
    """
    steps = horizon - t
    radius = 0.1 * steps + 0.1
    for _ in range(50):
        spent = sum(eps + eps * s / horizon * (radius - 0.1 * (s - t)) ** 2 for s in range(t, horizon))
        radius = 0.1 * steps + float(np.sqrt(max(0.01 - spent, 0.0)))
    return min(1.0, radius)


@pytest.fixture(scope="session")
def integrator():
    return make_scalar_integrator()


@pytest.fixture(scope="session")
def integrator_cfg():
    return SynthConfig(
        grid_axes=[INTEGRATOR_GRID],
        input_levels=[21],
        contraction_margin=INTEGRATOR_MARGIN,
        horizon=INTEGRATOR_HORIZON,
    )


@pytest.fixture(scope="session")
def integrator_storage(integrator, integrator_cfg):
    return synthesize_storage(integrator, integrator_cfg)


@pytest.fixture(scope="session")
def integrator_weights():
    return CostWeights(np.eye(1), np.eye(1), np.eye(1))


@pytest.fixture(scope="session")
def vdp():
    return make_vdp()


@pytest.fixture(scope="session")
def vdp_weights():
    return CostWeights(np.eye(2), np.eye(1), VDP_TERMINAL_P)


@pytest.fixture(scope="session")
def vdp_cfg():
    """通常のテスト用の粗い格子（実寸は slow テストで使う）"""
    return SynthConfig(
        grid_axes=[(-1.0, 1.0, 41), (-0.6, 0.6, 25)],
        input_levels=[21],
        contraction_margin=1e-3,
        horizon=30,
        dissipation_weight=0.02,
    )


@pytest.fixture(scope="session")
def vdp_storage(vdp, vdp_cfg):
    return synthesize_storage(vdp, vdp_cfg)


@pytest.fixture(scope="session")
def vdp_feasible_states(vdp_storage):
    """V(0, ·) の部分レベル集合に入る格子点（原点付近を除く）"""
    stage = vdp_storage.stage(0)
    nodes = stage.grid_points()
    inside = nodes[(stage.flat_values <= 0.0) & (np.linalg.norm(nodes, axis=1) > 0.1)]
    assert inside.shape[0] > 0
    return inside
