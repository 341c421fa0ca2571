"""
関数空間モジュール
多項式・格子補間関数・蓄積関数ファミリー
"""

from .polynomial import Polynomial, graded_lex_exponents
from .grid import GridFunction, InterpolationPlan
from .storage import StorageFunction, eval_function, eval_storage, STORAGE_FORMAT

__all__ = [
    'Polynomial',
    'graded_lex_exponents',
    'GridFunction',
    'InterpolationPlan',
    'StorageFunction',
    'eval_function',
    'eval_storage',
    'STORAGE_FORMAT',
]
