"""
動力学モジュール
制御系・コスト重み・RK4 離散化・カタログ
"""

from .system import (
    ControlSystem,
    CostWeights,
    rk4_step,
    rk4_step_batch,
    rk4_step_with_jacobian_batch,
    step_jacobian,
    simulate,
    stage_cost,
    stage_cost_batch,
    terminal_cost,
    input_lattice,
)
from .catalog import (
    VDP_TERMINAL_P,
    CATALOG,
    make_vdp,
    make_scalar_integrator,
    make_double_integrator,
    make_system,
    system_from_polynomials,
    with_input_box,
)

__all__ = [
    'ControlSystem',
    'CostWeights',
    'rk4_step',
    'rk4_step_batch',
    'rk4_step_with_jacobian_batch',
    'step_jacobian',
    'simulate',
    'stage_cost',
    'stage_cost_batch',
    'terminal_cost',
    'input_lattice',
    'VDP_TERMINAL_P',
    'CATALOG',
    'make_vdp',
    'make_scalar_integrator',
    'make_double_integrator',
    'make_system',
    'system_from_polynomials',
    'with_input_box',
]
