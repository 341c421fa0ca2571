"""
実験設定の定義とロード機能
JSON ファイルをセクションごとの pydantic モデルで検証する
"""

import json
import re
from pathlib import Path
from typing import Dict, List, Literal, Optional, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from ..dynamics.catalog import VDP_TERMINAL_P, make_system, system_from_polynomials, with_input_box
from ..dynamics.system import ControlSystem, CostWeights
from ..errors import ConfigError
from ..nlpsolve.solver import SolverConfig
from ..synth.dp import SynthConfig


# "estimate", "estimate*1.1", "estimate/2" の形式
_ALPHA_EXPRESSION = re.compile(r"^\s*estimate\s*(?:([*/])\s*([0-9.eE+-]+))?\s*$")

AlphaValue = Union[float, str]


def _check_alpha_value(value: AlphaValue) -> AlphaValue:
    if isinstance(value, str):
        if not _ALPHA_EXPRESSION.match(value):
            raise ValueError(f"alpha は数値または 'estimate', 'estimate*k', 'estimate/k' が必要です: {value!r}")
    elif not value > 0.0:
        raise ValueError(f"alpha は正である必要があります: {value}")
    return value


def resolve_alpha(value: AlphaValue, estimate: Optional[float] = None) -> float:
    """
    alpha の設定値を数値に解決

    Args:
        value: 数値または "estimate" 式
        estimate: α 推定値（式の場合に必要）

    Returns:
        正の α
    """
    if not isinstance(value, str):
        return float(value)
    match = _ALPHA_EXPRESSION.match(value)
    if match is None:
        raise ConfigError(f"alpha の式が不正です: {value!r}")
    if estimate is None:
        raise ConfigError(f"alpha = {value!r} の解決には α 推定値が必要です")
    op, factor = match.groups()
    if op is None:
        return float(estimate)
    return float(estimate) * float(factor) if op == '*' else float(estimate) / float(factor)


def needs_estimate(value: AlphaValue) -> bool:
    return isinstance(value, str)


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class PolynomialSystemConfig(_Section):
    """次数付き辞書式順序の密な係数で与える多項式系"""
    state_dim: int = Field(ge=1)
    input_dim: int = Field(ge=1)
    vector_field: List[List[float]]
    state_constraint: List[float]
    terminal_constraint: List[float]


class SystemConfig(_Section):
    """制御系（カタログ名か多項式のどちらか）"""
    name: Optional[str] = "vdp"
    params: Dict[str, float] = Field(default_factory=dict)
    polynomial: Optional[PolynomialSystemConfig] = None
    input_box: Optional[List[List[float]]] = None
    step_size: float = Field(default=0.1, gt=0.0)

    def build(self) -> ControlSystem:
        if self.polynomial is not None:
            if self.input_box is None:
                raise ConfigError("多項式系には system.input_box が必要です")
            poly = self.polynomial
            return system_from_polynomials(
                poly.state_dim, poly.input_dim, poly.vector_field,
                poly.state_constraint, poly.terminal_constraint,
                self.input_box, self.step_size,
            )
        if self.name is None:
            raise ConfigError("system.name か system.polynomial のどちらかが必要です")
        sys = make_system(self.name, step_size=self.step_size, **self.params)
        return with_input_box(sys, self.input_box)


class PlantConfig(_Section):
    """閉ループで状態を進めるプラント（省略時はモデルと同一）"""
    name: Optional[str] = None
    params: Dict[str, float] = Field(default_factory=dict)

    def build(self, model: ControlSystem) -> ControlSystem:
        name = self.name or model.name
        params = {**model.params, **self.params} if name == model.name else dict(self.params)
        plant = make_system(name, step_size=model.step_size, **params)
        return with_input_box(plant, np.stack([model.input_lower, model.input_upper], axis=1))


class WeightsConfig(_Section):
    """段コストと終端重み（省略時は単位行列、Van-der-Pol の P は終端楕円）"""
    Q: Optional[List[List[float]]] = None
    R: Optional[List[List[float]]] = None
    P: Optional[List[List[float]]] = None

    def build(self, sys: ControlSystem) -> CostWeights:
        n, m = sys.state_dim, sys.input_dim
        default_p = VDP_TERMINAL_P if sys.name == "vdp" else np.eye(n)
        try:
            return CostWeights(
                np.eye(n) if self.Q is None else np.asarray(self.Q, dtype=float),
                np.eye(m) if self.R is None else np.asarray(self.R, dtype=float),
                default_p if self.P is None else np.asarray(self.P, dtype=float),
            )
        except ValueError as e:
            raise ConfigError(f"weights が不正です: {e}") from None


class MpcConfig(_Section):
    alpha: AlphaValue = "estimate*1.1"
    horizon: int = Field(default=100, ge=2)
    steps: int = Field(default=600, ge=0)
    x0: List[float] = Field(default_factory=lambda: [-0.4, 0.2])
    controller: Literal["one-step", "full-horizon"] = "one-step"

    @field_validator('alpha')
    @classmethod
    def _check_alpha(cls, value):
        return _check_alpha_value(value)


class AlphaConfig(_Section):
    samples: int = Field(default=2000, ge=1)
    origin_exclusion: float = Field(default=1e-3, ge=0.0)
    safety_factor: float = Field(default=1.1, ge=1.0)
    verify_factor: int = Field(default=10, ge=0)
    snap_to_grid: bool = False


class VerifyConfig(_Section):
    samples: int = Field(default=1000, ge=1)
    tol: float = Field(default=1e-6, gt=0.0)
    snap_to_grid: bool = False
    input_refine: int = Field(default=4, ge=1)
    line_search_iters: int = Field(default=40, ge=0)


class SweepConfig(_Section):
    alphas: List[AlphaValue] = Field(default_factory=lambda: [1.0, "estimate/2", "estimate*1.1"])
    steps: Optional[int] = Field(default=None, ge=0)

    @field_validator('alphas')
    @classmethod
    def _check_alphas(cls, values):
        if not values:
            raise ValueError("sweep.alphas が空です")
        return [_check_alpha_value(v) for v in values]


class CompareConfig(_Section):
    baseline: Literal["full-horizon", "one-step"] = "full-horizon"
    steps: int = Field(default=100, ge=0)


class ExperimentConfig(_Section):
    """実験設定"""
    system: SystemConfig = Field(default_factory=SystemConfig)
    plant: Optional[PlantConfig] = None
    weights: WeightsConfig = Field(default_factory=WeightsConfig)
    synth: Optional[SynthConfig] = None
    solver: SolverConfig = Field(default_factory=SolverConfig)
    mpc: MpcConfig = Field(default_factory=MpcConfig)
    alpha: AlphaConfig = Field(default_factory=AlphaConfig)
    verify: VerifyConfig = Field(default_factory=VerifyConfig)
    sweep: SweepConfig = Field(default_factory=SweepConfig)
    compare: CompareConfig = Field(default_factory=CompareConfig)
    seed: int = 0
    output_dir: str = "output"
    storage_file: Optional[str] = None

    @model_validator(mode='after')
    def _check_x0(self):
        if self.system.polynomial is not None:
            n = self.system.polynomial.state_dim
            if len(self.mpc.x0) != n:
                raise ValueError(f"mpc.x0 の次元 {len(self.mpc.x0)} が状態次元 {n} と一致しません")
        return self

    @model_validator(mode='after')
    def _tie_origin_radius(self):
        # 合成時の原点近傍の半径は、明示されなければ α 推定の除外半径に揃える
        if self.synth is not None and 'origin_radius' not in self.synth.model_fields_set \
                and self.alpha.origin_exclusion > 0.0:
            self.synth = self.synth.model_copy(update={"origin_radius": self.alpha.origin_exclusion})
        return self

    @classmethod
    def from_file(cls, config_path: Union[str, Path]) -> 'ExperimentConfig':
        """
        JSON ファイルから設定をロード

        Args:
            config_path: 設定ファイルのパス

        Returns:
            ExperimentConfig（ファイルが無い・JSON が不正・未知のキーは ConfigError）
        """
        path = Path(config_path)
        if not path.exists():
            raise ConfigError(f"設定ファイルが見つかりません: {path}")
        try:
            with open(path, 'r', encoding='utf-8') as f:
                data = json.load(f)
        except json.JSONDecodeError as e:
            raise ConfigError(f"設定ファイルの JSON が不正です: {path}: {e}") from None
        return cls.from_dict(data, source=str(path))

    @classmethod
    def from_dict(cls, data: dict, source: str = "<dict>") -> 'ExperimentConfig':
        try:
            return cls.model_validate(data)
        except ValidationError as e:
            problems = "; ".join(
                f"{'.'.join(str(p) for p in err['loc'])}: {err['msg']}" for err in e.errors()
            )
            raise ConfigError(f"設定が不正です ({source}): {problems}") from None

    def with_overrides(self, output_dir: Optional[str] = None, seed: Optional[int] = None) -> 'ExperimentConfig':
        """コマンドライン・環境変数による上書き"""
        update = {}
        if output_dir is not None:
            update["output_dir"] = output_dir
        if seed is not None:
            update["seed"] = int(seed)
        return self.model_copy(update=update)

    @property
    def output_path(self) -> Path:
        return Path(self.output_dir)

    @property
    def storage_path(self) -> Path:
        if self.storage_file is not None:
            return Path(self.storage_file)
        return self.output_path / "storage.json"

    @property
    def certificate_path(self) -> Path:
        """α 証明書は蓄積関数ファイルの隣に置く"""
        return self.storage_path.parent / "alpha_certificate.json"

    def build_system(self) -> ControlSystem:
        return self.system.build()

    def build_plant(self, model: ControlSystem) -> ControlSystem:
        return model if self.plant is None else self.plant.build(model)

    def build_weights(self, sys: ControlSystem) -> CostWeights:
        return self.weights.build(sys)

    def require_synth(self) -> SynthConfig:
        if self.synth is None:
            raise ConfigError("synth セクション（grid_axes, horizon など）が必要です")
        return self.synth
