"""
α 証明モジュール
安定性重みのサンプリング推定と閉ループ軌道に沿った減少条件の検証
"""

from .certificate import (
    CERTIFICATE_FORMAT,
    AlphaCertificate,
    estimate_alpha,
    verify_alpha,
    verify_eq11_along,
)

__all__ = [
    'AlphaCertificate',
    'CERTIFICATE_FORMAT',
    'estimate_alpha',
    'verify_alpha',
    'verify_eq11_along',
]
