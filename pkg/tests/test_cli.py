import json

import numpy as np
import pandas as pd
import pytest

from main import main
from src.cli.config import ExperimentConfig, needs_estimate, resolve_alpha
from src.cli.outputs import plot_script, timing_table, trajectory_stats
from src.errors import ConfigError
from src.mpc import TrajectoryLog

from .conftest import ROOT


def _base_config() -> dict:
    with open(ROOT / "config" / "integrator.json", encoding="utf-8") as f:
        data = json.load(f)
    data["mpc"]["steps"] = 8
    data["sweep"]["steps"] = 5
    data["compare"]["steps"] = 3
    data["alpha"]["samples"] = 200
    data["verify"]["samples"] = 200
    return data


def _write(directory, data: dict, name: str = "config.json"):
    path = directory / name
    path.write_text(json.dumps(data), encoding="utf-8")
    return str(path)


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """合成済みの蓄積関数を持つ出力ディレクトリと設定ファイル"""
    root = tmp_path_factory.mktemp("cli")
    out = root / "out"
    config = _write(root, _base_config())
    assert main(["synthesize-storage", "--config", config, "--out", str(out)]) == 0
    return root, out, config


class TestExitCodes:

    def test_synthesize_writes_files(self, workspace):
        _, out, _ = workspace
        assert (out / "storage.json").exists()
        assert (out / "verify_report.txt").exists()
        report = pd.read_csv(out / "verify_report.csv")
        assert list(report["check"]) == ["storage", "contraction", "nonempty"]
        assert report["passed"].all()

    def test_verify(self, workspace):
        _, out, config = workspace
        assert main(["verify", "--config", config, "--out", str(out)]) == 0

    def test_estimate_alpha(self, workspace):
        _, out, config = workspace
        assert main(["estimate-alpha", "--config", config, "--out", str(out)]) == 0
        data = json.loads((out / "alpha_certificate.json").read_text(encoding="utf-8"))
        assert data["valid"] is True
        assert data["alpha_est"] > 0.0

    def test_run_one_step(self, workspace):
        _, out, config = workspace
        assert main(["run", "--config", config, "--out", str(out)]) == 0
        trajectories = list(out.glob("trajectory_onestep_alpha*.csv"))
        assert len(trajectories) == 1
        frame = pd.read_csv(trajectories[0])
        assert len(frame) == 9
        assert "eq11_residual" in frame.columns
        assert list(out.glob("plot_onestep_alpha*.gp"))

    def test_run_full_horizon(self, workspace):
        root, out, _ = workspace
        data = _base_config()
        data["mpc"]["controller"] = "full-horizon"
        data["mpc"]["steps"] = 3
        config = _write(root, data, "full.json")
        assert main(["run", "--config", config, "--out", str(out)]) == 0
        assert (out / "trajectory_fullhorizon_T5.csv").exists()

    def test_reversed_storage_fails_verification(self, tmp_path):
        data = _base_config()
        data["synth"]["reverse_stages"] = True
        config = _write(tmp_path, data)
        assert main(["synthesize-storage", "--config", config, "--out", str(tmp_path / "out")]) == 2
        assert (tmp_path / "out" / "verify_report.txt").exists()

    def test_missing_grid_keys(self, tmp_path):
        data = _base_config()
        del data["synth"]["grid_axes"]
        assert main(["synthesize-storage", "--config", _write(tmp_path, data)]) == 1

    def test_unknown_key(self, tmp_path):
        data = _base_config()
        data["mpc"]["lookahead"] = 3
        assert main(["run", "--config", _write(tmp_path, data)]) == 1

    def test_missing_config_file(self, tmp_path):
        assert main(["verify", "--config", str(tmp_path / "none.json")]) == 1

    def test_missing_storage(self, tmp_path):
        data = _base_config()
        assert main(["verify", "--config", _write(tmp_path, data), "--out", str(tmp_path / "empty")]) == 1

    def test_initial_state_outside(self, workspace):
        root, out, _ = workspace
        data = _base_config()
        data["mpc"]["x0"] = [5.0]
        config = _write(root, data, "outside.json")
        assert main(["run", "--config", config, "--out", str(out)]) == 3

    def test_no_command(self):
        assert main([]) == 1


class TestCompareAndSweep:

    def test_compare(self, workspace):
        _, out, config = workspace
        assert main(["compare", "--config", config, "--out", str(out)]) == 0
        table = pd.read_csv(out / "compare.csv")
        assert list(table.columns) == ["t", "onestep_ms", "fullhorizon_ms", "speedup"]
        assert list(table["t"].astype(str))[-2:] == ["median", "worst"]
        assert len(table) == 3 + 2

    def test_compare_without_steps(self, workspace):
        root, out, _ = workspace
        data = _base_config()
        data["compare"]["steps"] = 0
        compare_out = root / "compare0"
        # 蓄積関数と証明書は共有の出力先から読む
        data["storage_file"] = str(out / "storage.json")
        config = _write(root, data, "compare0.json")
        assert main(["compare", "--config", config, "--out", str(compare_out)]) == 0
        table = pd.read_csv(compare_out / "compare.csv")
        assert len(table) == 2
        assert table[["onestep_ms", "fullhorizon_ms", "speedup"]].isna().all().all()

    def test_sweep(self, workspace):
        _, out, config = workspace
        assert main(["sweep", "--config", config, "--out", str(out), "--seed", "2"]) == 0
        table = pd.read_csv(out / "sweep_summary.csv")
        assert list(table.columns) == [
            "alpha", "converged", "final_norm", "min_norm_after_100",
            "min_residual", "negative_residual_steps",
        ]
        assert len(table) == 2
        assert table["alpha"].iloc[0] == 1.0


class TestConfig:

    def test_resolve_alpha(self):
        assert resolve_alpha(2.5) == 2.5
        assert resolve_alpha("estimate", 40.0) == 40.0
        assert resolve_alpha("estimate*1.1", 40.0) == pytest.approx(44.0)
        assert resolve_alpha("estimate/2", 40.0) == pytest.approx(20.0)

    def test_resolve_alpha_needs_estimate(self):
        assert needs_estimate("estimate/2")
        assert not needs_estimate(3.0)
        with pytest.raises(ConfigError):
            resolve_alpha("estimate", None)

    def test_bad_alpha_expression(self):
        with pytest.raises(ConfigError):
            ExperimentConfig.from_dict({"mpc": {"alpha": "twice"}})
        with pytest.raises(ConfigError):
            ExperimentConfig.from_dict({"mpc": {"alpha": -1.0}})

    def test_defaults(self):
        cfg = ExperimentConfig.from_dict({})
        assert cfg.mpc.x0 == [-0.4, 0.2]
        assert cfg.mpc.alpha == "estimate*1.1"
        assert cfg.alpha.safety_factor == 1.1
        assert cfg.storage_path.name == "storage.json"
        assert cfg.certificate_path.parent == cfg.storage_path.parent

    def test_overrides(self):
        cfg = ExperimentConfig.from_dict({"seed": 1}).with_overrides(output_dir="elsewhere", seed=5)
        assert cfg.seed == 5
        assert cfg.output_path.name == "elsewhere"

    def test_origin_radius_follows_exclusion(self):
        synth = {"grid_axes": [[-1.0, 1.0, 11]], "horizon": 3}
        cfg = ExperimentConfig.from_dict({"synth": synth, "alpha": {"origin_exclusion": 0.05}})
        assert cfg.synth.origin_radius == 0.05
        explicit = ExperimentConfig.from_dict({"synth": {**synth, "origin_radius": 0.2},
                                               "alpha": {"origin_exclusion": 0.05}})
        assert explicit.synth.origin_radius == 0.2

    def test_verify_defaults(self):
        cfg = ExperimentConfig.from_dict({})
        assert cfg.verify.input_refine == 4
        assert cfg.verify.line_search_iters == 40
        assert not cfg.verify.snap_to_grid
        assert not cfg.alpha.snap_to_grid

    def test_require_synth(self):
        with pytest.raises(ConfigError):
            ExperimentConfig.from_dict({}).require_synth()

    def test_vdp_weights_default(self):
        cfg = ExperimentConfig.from_dict({})
        sys = cfg.build_system()
        weights = cfg.build_weights(sys)
        assert weights.P[0, 0] == pytest.approx(6.4314)

    def test_invalid_weights(self):
        cfg = ExperimentConfig.from_dict({"weights": {"Q": [[1.0, 0.0], [0.0, -1.0]]}})
        with pytest.raises(ConfigError):
            cfg.build_weights(cfg.build_system())

    def test_plant_params_merge(self):
        cfg = ExperimentConfig.from_dict({"plant": {"params": {"mu": 1.2}}})
        model = cfg.build_system()
        plant = cfg.build_plant(model)
        assert plant.params["mu"] == 1.2
        assert plant.step_size == model.step_size

    def test_shipped_configs_load(self):
        for name in ("vdp.json", "integrator.json"):
            cfg = ExperimentConfig.from_file(ROOT / "config" / name)
            assert cfg.synth is not None


class TestOutputs:

    def test_timing_table(self):
        table = timing_table([0.001, 0.003, 0.002], [0.01, 0.03, 0.04])
        assert list(table["t"]) == ["0", "1", "2", "median", "worst"]
        median = table.iloc[3]
        assert median["onestep_ms"] == pytest.approx(2.0)
        assert median["fullhorizon_ms"] == pytest.approx(30.0)
        assert median["speedup"] == pytest.approx(15.0)
        worst = table.iloc[4]
        assert worst["speedup"] == pytest.approx(40.0 / 3.0)

    def test_timing_table_empty(self):
        table = timing_table([], [])
        assert len(table) == 2
        assert np.isnan(table["speedup"]).all()

    def test_trajectory_stats(self, integrator):
        log = TrajectoryLog(
            states=[np.array([0.5]), np.array([0.4]), np.array([0.05])],
            inputs=[np.array([-1.0]), np.array([-1.0])],
            eq11_residuals=[0.2, -0.1],
            statuses=["converged", "infeasible"],
        )
        stats = trajectory_stats(log, integrator)
        assert stats["converged"] is True
        assert stats["final_norm"] == pytest.approx(0.05)
        assert np.isnan(stats["min_norm_after_100"])
        assert stats["min_residual"] == pytest.approx(-0.1)
        assert stats["negative_residual_steps"] == 1
        assert stats["infeasible_steps"] == 1

    def test_plot_script_phase_columns(self):
        assert "using 2:3" in plot_script("trajectory_a.csv", 2, "a")
        assert "using 1:2" in plot_script("trajectory_b.csv", 1, "b")
