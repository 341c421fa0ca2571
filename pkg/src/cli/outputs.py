"""
結果ファイルの出力
検証レポート・計算時間比較表・α スイープ表・gnuplot スクリプト
"""

from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from ..dynamics.system import ControlSystem
from ..mpc.closed_loop import TrajectoryLog
from ..synth.verification import StorageReport


def write_report(report: StorageReport, out_dir: Path, extra: Optional[Dict[str, float]] = None) -> Tuple[Path, Path]:
    """
    検証レポートを verify_report.txt / verify_report.csv に書き出す

    Returns:
        (テキストのパス, CSV のパス)
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    text = report.summary()
    if extra:
        text += "\n" + "\n".join(f"   {key}: {value:.6g}" for key, value in extra.items())
    text_path = out_dir / "verify_report.txt"
    text_path.write_text(
        f"samples per stage: {report.samples}\nstage sizes: {report.stage_counts}\n{text}\n",
        encoding='utf-8',
    )
    csv_path = out_dir / "verify_report.csv"
    pd.DataFrame(report.to_rows(), columns=["check", "value", "threshold", "passed"]).to_csv(csv_path, index=False)
    return text_path, csv_path


def timing_table(onestep_times: Sequence[float], fullhorizon_times: Sequence[float]) -> pd.DataFrame:
    """
    ステップごとの計算時間 [ms] と要約行

    要約行は t = "median" と t = "worst"。speedup 列はそれぞれの統計量の比
    （全ホライズン / 一段）。ステップ数 0 なら要約行は NaN になる
    """
    one = np.asarray(onestep_times, dtype=float) * 1e3
    full = np.asarray(fullhorizon_times, dtype=float) * 1e3
    steps = min(one.size, full.size)
    one, full = one[:steps], full[:steps]

    with np.errstate(divide='ignore', invalid='ignore'):
        body = pd.DataFrame({
            "t": [str(t) for t in range(steps)],
            "onestep_ms": one,
            "fullhorizon_ms": full,
            "speedup": full / one,
        })

    def summary(tag: str, reducer) -> Dict[str, object]:
        if steps == 0:
            return {"t": tag, "onestep_ms": np.nan, "fullhorizon_ms": np.nan, "speedup": np.nan}
        a, b = float(reducer(one)), float(reducer(full))
        return {"t": tag, "onestep_ms": a, "fullhorizon_ms": b, "speedup": b / a if a > 0 else np.nan}

    rows = pd.DataFrame([summary("median", np.median), summary("worst", np.max)])
    return pd.concat([body, rows], ignore_index=True)


def trajectory_stats(log: TrajectoryLog, sys: ControlSystem, after: int = 100) -> Dict[str, float]:
    """最終状態・収束判定・after ステップ以降の最小ノルムなど"""
    states = log.state_array
    norms = np.linalg.norm(states, axis=1)
    tail = norms[after + 1:] if norms.size > after + 1 else np.zeros(0)
    residuals = np.asarray(log.eq11_residuals, dtype=float)
    return {
        "converged": bool(sys.l(states[-1]) <= 0.0),
        "final_norm": float(norms[-1]),
        f"min_norm_after_{after}": float(np.min(tail)) if tail.size else float('nan'),
        "min_residual": float(np.min(residuals)) if residuals.size else float('nan'),
        "negative_residual_steps": int(np.sum(residuals < 0.0)),
        "infeasible_steps": len(log.infeasible_steps),
    }


def sweep_table(rows: List[Dict[str, object]]) -> pd.DataFrame:
    columns = ["alpha", "converged", "final_norm", "min_norm_after_100",
               "min_residual", "negative_residual_steps"]
    return pd.DataFrame(rows, columns=columns)


def plot_script(csv_path: Path, state_dim: int, title: str) -> str:
    """
    gnuplot スクリプト（位相図と減少条件の残差）

    位相図は 2 次元以上なら x_1-x_2 平面、1 次元なら t-x_1
    """
    name = Path(csv_path).name
    phase = "using 2:3" if state_dim >= 2 else "using 1:2"
    xlabel, ylabel = ("x_1", "x_2") if state_dim >= 2 else ("t", "x_1")
    return "\n".join([
        f"# {title}",
        "set datafile separator ','",
        "set key autotitle columnhead",
        "set terminal pngcairo size 1200,500",
        f"set output '{Path(name).stem}.png'",
        "set multiplot layout 1,2",
        "set title 'phase plot'",
        f"set xlabel '{xlabel}'",
        f"set ylabel '{ylabel}'",
        f"plot '{name}' {phase} with lines",
        "set title 'decrease residual'",
        "set xlabel 't'",
        "set ylabel 'residual'",
        f"plot '{name}' using 1:(column('eq11_residual')) with lines, 0 with lines dt 2 notitle",
        "unset multiplot",
        "",
    ])


def write_trajectory(log: TrajectoryLog, out_dir: Path, tag: str) -> Tuple[Path, Path]:
    """軌道 CSV と gnuplot スクリプトを書き出す"""
    out_dir = Path(out_dir)
    csv_path = log.to_csv(out_dir / f"trajectory_{tag}.csv")
    state_dim = len(log.states[0])
    script_path = out_dir / f"plot_{tag}.gp"
    script_path.write_text(plot_script(csv_path, state_dim, f"{log.controller} {tag}"), encoding='utf-8')
    return csv_path, script_path
