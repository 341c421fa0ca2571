"""
非線形計画ソルバー
箱制約 + スカラー不等式制約の拡張ラグランジュ法
"""

from .solver import SolveResult, SolverConfig, minimize, multistart_lattice

__all__ = ['SolverConfig', 'SolveResult', 'minimize', 'multistart_lattice']
