"""
CLI サブコマンドの実装
蓄積関数の合成・検証・α 推定・閉ループ実行・計算時間比較・α スイープ

各コマンドは例外を送出し、終了コードへの対応は main.py が行う
"""

from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np

from ..alphacert.certificate import AlphaCertificate, estimate_alpha, verify_eq11_along
from ..dynamics.system import ControlSystem, CostWeights
from ..errors import ConfigError, DimensionError, VerificationError
from ..funcspace.storage import StorageFunction
from ..mpc.closed_loop import FullHorizonController, OneStepController, TrajectoryLog, run_closed_loop
from ..synth.dp import synthesize_storage
from ..synth.verification import check_viability, verify_storage
from .config import ExperimentConfig, needs_estimate, resolve_alpha
from .outputs import (
    sweep_table,
    timing_table,
    trajectory_stats,
    write_report,
    write_trajectory,
)


def _banner(title: str, cfg: ExperimentConfig) -> None:
    print("=" * 60)
    print(f"  {title}")
    print(f"  制御系: {cfg.system.name or 'polynomial'} / 出力先: {cfg.output_path}")
    print("=" * 60)


def _load_storage(cfg: ExperimentConfig) -> StorageFunction:
    path = cfg.storage_path
    if not path.exists():
        raise ConfigError(
            f"蓄積関数ファイルが見つかりません: {path}（先に synthesize-storage を実行してください）"
        )
    try:
        return StorageFunction.load(path)
    except (ValueError, KeyError) as e:
        raise ConfigError(f"蓄積関数ファイルが不正です: {path}: {e}") from None


def _x0(cfg: ExperimentConfig, sys: ControlSystem) -> np.ndarray:
    x0 = np.asarray(cfg.mpc.x0, dtype=float)
    if x0.size != sys.state_dim:
        raise ConfigError(f"mpc.x0 の次元 {x0.size} が状態次元 {sys.state_dim} と一致しません")
    return x0


def _verify_and_report(sys: ControlSystem, V: StorageFunction, cfg: ExperimentConfig) -> Dict[str, Path]:
    print(f"\n[検証] 段ごとに {cfg.verify.samples} サンプルで 3 条件を確認中...")
    report = verify_storage(
        sys, V,
        samples=cfg.verify.samples,
        tol=cfg.verify.tol,
        seed=cfg.seed,
        snap_to_grid=cfg.verify.snap_to_grid,
        input_refine=cfg.verify.input_refine,
        line_search_iters=cfg.verify.line_search_iters,
    )
    extra = {}
    if V.horizon >= 2 and report.nonempty_passed:
        viability = check_viability(sys, V, samples=min(200, cfg.verify.samples),
                                    tol=cfg.verify.tol, seed=cfg.seed)
        extra = {"viable_fraction": viability["fraction_viable"],
                 "viable_worst_value": viability["worst_value"]}
    text_path, csv_path = write_report(report, cfg.output_path, extra)
    print(report.summary())
    print(f"✓ レポート: {text_path}")
    if not report.passed:
        raise VerificationError(f"蓄積関数の検証に失敗しました（詳細: {text_path}）")
    return {"report": text_path, "report_csv": csv_path}


def cmd_synthesize(cfg: ExperimentConfig) -> Dict[str, Path]:
    """蓄積関数を合成して保存し、検証レポートを書く"""
    synth = cfg.require_synth()
    _banner("蓄積関数の合成", cfg)
    sys = cfg.build_system()
    V = synthesize_storage(sys, synth, verbose=True)
    path = V.save(cfg.storage_path)
    print(f"✓ 蓄積関数を保存しました: {path}")
    return {"storage": path, **_verify_and_report(sys, V, cfg)}


def cmd_verify(cfg: ExperimentConfig) -> Dict[str, Path]:
    """保存済みの蓄積関数を検証"""
    _banner("蓄積関数の検証", cfg)
    sys = cfg.build_system()
    V = _load_storage(cfg)
    if V.num_vars != sys.state_dim:
        raise DimensionError(f"蓄積関数の次元 {V.num_vars} が状態次元 {sys.state_dim} と一致しません")
    return _verify_and_report(sys, V, cfg)


def _estimate(cfg: ExperimentConfig, sys: ControlSystem, V: StorageFunction,
              weights: CostWeights, reverify: bool) -> AlphaCertificate:
    return estimate_alpha(
        sys, V, weights,
        samples=cfg.alpha.samples,
        origin_exclusion=cfg.alpha.origin_exclusion,
        safety_factor=cfg.alpha.safety_factor,
        seed=cfg.seed,
        snap_to_grid=cfg.alpha.snap_to_grid,
        tol=cfg.verify.tol,
        reverify_factor=cfg.alpha.verify_factor if reverify else 0,
    )


def cmd_estimate_alpha(cfg: ExperimentConfig) -> Dict[str, Path]:
    """α₀ を推定して alpha_certificate.json に保存"""
    _banner("安定性重み α の推定", cfg)
    sys = cfg.build_system()
    V = _load_storage(cfg)
    weights = cfg.build_weights(sys)

    print(f"\n[1/2] {cfg.alpha.samples} サンプルで比 W/ΔV を評価中...")
    certificate = _estimate(cfg, sys, V, weights, reverify=True)
    print(f"[2/2] 再検証（{cfg.alpha.verify_factor} 倍のサンプル）完了")
    path = certificate.save(cfg.certificate_path)
    print(certificate.summary())
    print(f"✓ 証明書: {path}")
    if not certificate.valid:
        raise VerificationError(f"α 証明書が無効です（詳細: {path}）")
    return {"certificate": path}


def _alpha_estimate(cfg: ExperimentConfig, sys: ControlSystem, V: StorageFunction,
                    weights: CostWeights) -> float:
    """保存済みの証明書があればそれを、無ければ推定して保存したものを使う"""
    path = cfg.certificate_path
    if path.exists():
        certificate = AlphaCertificate.load(path)
        print(f"✓ α 証明書を読み込みました: α = {certificate.alpha_est:.4f}")
    else:
        print("⚠️  α 証明書が無いため推定します（再検証なし）")
        certificate = _estimate(cfg, sys, V, weights, reverify=False)
        certificate.save(path)
        print(f"✓ α = {certificate.alpha_est:.4f}（{path}）")
    if not certificate.valid:
        raise VerificationError(f"α 証明書が無効です: {path}")
    return certificate.alpha_est


def _one_step_controller(cfg: ExperimentConfig, sys: ControlSystem, weights: CostWeights,
                         alpha_value, V: Optional[StorageFunction] = None) -> Tuple[OneStepController, float]:
    V = V or _load_storage(cfg)
    estimate = _alpha_estimate(cfg, sys, V, weights) if needs_estimate(alpha_value) else None
    alpha = resolve_alpha(alpha_value, estimate)
    return OneStepController(V, weights, alpha), alpha


def _run(cfg: ExperimentConfig, controller, sys: ControlSystem, steps: int) -> TrajectoryLog:
    plant = cfg.build_plant(sys)
    log = run_closed_loop(controller, sys, plant, _x0(cfg, sys), steps, cfg.solver, verbose=True)
    if isinstance(controller, OneStepController):
        verify_eq11_along(log, controller.V, controller.weights, controller.alpha)
    return log


def _print_stats(stats: Dict[str, float]) -> None:
    mark = "✓" if stats["converged"] else "⚠️"
    print(f"{mark} 終端集合への到達: {stats['converged']}、‖x(N)‖ = {stats['final_norm']:.4f}")
    print(f"   減少条件の最小残差: {stats['min_residual']:.3e}（負のステップ {stats['negative_residual_steps']}）")
    if stats["infeasible_steps"]:
        print(f"[WARNING] 実行不能なステップ: {stats['infeasible_steps']}")


def cmd_run(cfg: ExperimentConfig) -> Dict[str, Path]:
    """閉ループを実行して軌道 CSV と gnuplot スクリプトを書く"""
    _banner(f"閉ループ実行（{cfg.mpc.controller}）", cfg)
    sys = cfg.build_system()
    weights = cfg.build_weights(sys)

    if cfg.mpc.controller == "one-step":
        controller, alpha = _one_step_controller(cfg, sys, weights, cfg.mpc.alpha)
        tag = f"onestep_alpha{alpha:.4g}"
        print(f"\n一段 MPC: α = {alpha:.4f}, {cfg.mpc.steps} ステップ")
    else:
        controller = FullHorizonController(weights, cfg.mpc.horizon)
        tag = f"fullhorizon_T{cfg.mpc.horizon}"
        print(f"\n全ホライズン MPC: T = {cfg.mpc.horizon}, {cfg.mpc.steps} ステップ")

    log = _run(cfg, controller, sys, cfg.mpc.steps)
    csv_path, script_path = write_trajectory(log, cfg.output_path, tag)
    _print_stats(trajectory_stats(log, sys))
    print(f"✓ 軌道: {csv_path}")
    print(f"✓ プロット: {script_path}")
    return {"trajectory": csv_path, "plot": script_path}


def cmd_compare(cfg: ExperimentConfig) -> Dict[str, Path]:
    """一段 MPC と比較対象の計算時間をステップごとに比較"""
    _banner(f"計算時間の比較（one-step vs {cfg.compare.baseline}）", cfg)
    sys = cfg.build_system()
    weights = cfg.build_weights(sys)
    steps = cfg.compare.steps

    controller, alpha = _one_step_controller(cfg, sys, weights, cfg.mpc.alpha)
    if cfg.compare.baseline == "full-horizon":
        baseline = FullHorizonController(weights, cfg.mpc.horizon)
    else:
        baseline = OneStepController(controller.V, weights, alpha)

    print(f"\n[1/2] 一段 MPC（α = {alpha:.4f}）を {steps} ステップ実行中...")
    one_log = _run(cfg, controller, sys, steps)
    print(f"\n[2/2] {cfg.compare.baseline} を {steps} ステップ実行中...")
    base_log = _run(cfg, baseline, sys, steps)

    table = timing_table(one_log.solve_times, base_log.solve_times)
    cfg.output_path.mkdir(parents=True, exist_ok=True)
    path = cfg.output_path / "compare.csv"
    table.to_csv(path, index=False)

    median = table[table["t"] == "median"].iloc[0]
    worst = table[table["t"] == "worst"].iloc[0]
    print(f"\n✓ 中央値: {median['onestep_ms']:.2f} ms vs {median['fullhorizon_ms']:.2f} ms"
          f"（{median['speedup']:.1f} 倍）")
    print(f"✓ 最悪値: {worst['onestep_ms']:.2f} ms vs {worst['fullhorizon_ms']:.2f} ms"
          f"（{worst['speedup']:.1f} 倍）")
    print(f"✓ 比較表: {path}")
    return {"compare": path}


def cmd_sweep(cfg: ExperimentConfig) -> Dict[str, Path]:
    """同じ初期状態から複数の α で一段 MPC を実行し、要約表を書く"""
    _banner("α スイープ", cfg)
    sys = cfg.build_system()
    weights = cfg.build_weights(sys)
    V = _load_storage(cfg)
    steps = cfg.mpc.steps if cfg.sweep.steps is None else cfg.sweep.steps

    estimate = None
    if any(needs_estimate(value) for value in cfg.sweep.alphas):
        estimate = _alpha_estimate(cfg, sys, V, weights)

    rows: List[Dict[str, object]] = []
    paths: Dict[str, Path] = {}
    total = len(cfg.sweep.alphas)
    for i, value in enumerate(cfg.sweep.alphas, start=1):
        alpha = resolve_alpha(value, estimate)
        print(f"\n[{i}/{total}] α = {alpha:.4f}（{value}）")
        log = _run(cfg, OneStepController(V, weights, alpha), sys, steps)
        tag = f"alpha{alpha:.4g}"
        csv_path, _ = write_trajectory(log, cfg.output_path, tag)
        stats = trajectory_stats(log, sys)
        _print_stats(stats)
        rows.append({"alpha": alpha, **stats})
        paths[tag] = csv_path

    path = cfg.output_path / "sweep_summary.csv"
    sweep_table(rows).to_csv(path, index=False)
    print(f"\n✓ 要約表: {path}")
    return {"summary": path, **paths}


COMMANDS = {
    "synthesize-storage": cmd_synthesize,
    "verify": cmd_verify,
    "estimate-alpha": cmd_estimate_alpha,
    "run": cmd_run,
    "compare": cmd_compare,
    "sweep": cmd_sweep,
}
