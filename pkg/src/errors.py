"""
例外クラス定義
ライブラリ全体で共有するエラー階層（終了コードへの対応は main.py が行う）
"""

from typing import Optional, Sequence


class OneStepMPCError(Exception):
    """このパッケージが送出する例外の基底クラス"""


class DimensionError(OneStepMPCError, ValueError):
    """ベクトルや行列の次元が系と一致しない"""


class NumericError(OneStepMPCError, ArithmeticError):
    """計算途中で非有限値（NaN / inf）が発生した"""

    def __init__(self, message: str, point: Optional[Sequence[float]] = None):
        self.point = None if point is None else [float(v) for v in point]
        if self.point is not None:
            message = f"{message} (point={self.point})"
        super().__init__(message)


class ConfigError(OneStepMPCError):
    """設定ファイルが不正、または未知のキーを含む（終了コード 1）"""


class VerificationError(OneStepMPCError):
    """蓄積関数や α 証明書の検証に失敗した（終了コード 2）"""


class PreconditionError(OneStepMPCError):
    """実行時の前提条件が満たされない（終了コード 3）"""

    def __init__(self, message: str, value: Optional[float] = None):
        self.value = value
        super().__init__(message)


class InfeasibleInputError(PreconditionError):
    """部分レベル集合の外側で実行可能入力の選択が要求された"""


class SynthesisError(OneStepMPCError):
    """合成結果の部分レベル集合がすべての段で空になった"""


__all__ = [
    'OneStepMPCError',
    'DimensionError',
    'NumericError',
    'ConfigError',
    'VerificationError',
    'PreconditionError',
    'InfeasibleInputError',
    'SynthesisError',
]
