"""
合成・検証モジュール
DP による蓄積関数の合成、サンプリング検証、実行可能入力の選択
"""

from .dp import SynthConfig, synthesize_storage
from .verification import (
    StorageReport,
    storage_gaps,
    verify_storage,
    select_viable_input,
    check_viability,
    exhaustive_reach,
    in_inner_approximation,
    sample_sublevel,
)

__all__ = [
    'SynthConfig',
    'synthesize_storage',
    'StorageReport',
    'storage_gaps',
    'verify_storage',
    'select_viable_input',
    'check_viability',
    'exhaustive_reach',
    'in_inner_approximation',
    'sample_sublevel',
]
