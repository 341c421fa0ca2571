import numpy as np
import pytest
from numpy.testing import assert_allclose

from src.dynamics import make_double_integrator, rk4_step, rk4_step_batch, input_lattice
from src.errors import ConfigError, InfeasibleInputError, SynthesisError
from src.funcspace import GridFunction, StorageFunction, eval_storage
from src.synth import (
    SynthConfig,
    check_viability,
    exhaustive_reach,
    in_inner_approximation,
    sample_sublevel,
    select_viable_input,
    storage_gaps,
    synthesize_storage,
    verify_storage,
)

from .conftest import INTEGRATOR_GRID, INTEGRATOR_HORIZON, integrator_radius


def _sublevel_radius(V: StorageFunction, t: int) -> float:
    stage = V.stage(t)
    nodes = stage.grid_points()[:, 0]
    return float(np.max(np.abs(nodes[stage.flat_values <= 0.0])))


class TestScalarIntegratorOracle:

    @pytest.mark.parametrize("t", range(INTEGRATOR_HORIZON + 1))
    def test_sublevel_matches_interval(self, integrator_storage, t):
        cell = 2.0 / 200
        radius = _sublevel_radius(integrator_storage, t)
        assert abs(radius - integrator_radius(t)) <= cell + 1e-9

    def test_sublevel_sets_are_intervals(self, integrator_storage):
        for t in range(INTEGRATOR_HORIZON + 1):
            stage = integrator_storage.stage(t)
            inside = np.flatnonzero(stage.flat_values <= 0.0)
            assert np.all(np.diff(inside) == 1)

    def test_terminal_stage_inside_terminal_set(self, integrator, integrator_storage):
        stage = integrator_storage.stage(INTEGRATOR_HORIZON)
        nodes = stage.grid_points()[stage.flat_values <= 0.0]
        assert np.all(integrator.terminal_constraint.eval_batch(nodes) <= 0.0)

    def test_origin_is_feasible(self, integrator_storage):
        assert eval_storage(integrator_storage, 0, [0.0]) <= 0.0

    def test_inner_approximation_by_tree_search(self, integrator, integrator_storage):
        rng = np.random.default_rng(0)
        members = sample_sublevel(integrator_storage, 0, 50, rng)
        for x in members:
            assert in_inner_approximation(integrator_storage, 0, x)
            sequence = exhaustive_reach(integrator, x, INTEGRATOR_HORIZON, [21])
            assert sequence is not None, f"到達入力列が見つからない: x={x}"

    def test_tree_search_rejects_outside(self, integrator):
        assert exhaustive_reach(integrator, [0.8], INTEGRATOR_HORIZON, [21]) is None

    def test_deterministic(self, integrator, integrator_cfg, integrator_storage):
        again = synthesize_storage(integrator, integrator_cfg)
        for t in range(INTEGRATOR_HORIZON + 1):
            assert again.stage(t).flat_values.tobytes() == integrator_storage.stage(t).flat_values.tobytes()


def _best_successor(sys, V: StorageFunction, t: int, points: np.ndarray) -> np.ndarray:
    inputs = input_lattice(sys, V.input_levels)
    successors = rk4_step_batch(
        sys, np.tile(points, (len(inputs), 1)), np.repeat(inputs, len(points), axis=0)
    )
    return V.penalized_values(t + 1, successors).reshape(len(inputs), -1).min(axis=0)


class TestRecursion:

    @pytest.mark.parametrize("system, storage", [
        ("integrator", "integrator_storage"),
        ("vdp", "vdp_storage"),
    ])
    def test_margin_at_nodes(self, request, system, storage):
        sys = request.getfixturevalue(system)
        V = request.getfixturevalue(storage)
        eps = V.meta["contraction_margin"]
        radius = V.meta["origin_radius"]
        nodes = V.stage(0).grid_points()
        away = np.linalg.norm(nodes, axis=1) >= radius
        for t in range(V.horizon):
            values = V.stage(t).flat_values
            inside = values <= 0.0
            best = _best_successor(sys, V, t, nodes[inside])
            # 原点の球の外では +ε、原点でも後続値を下回らない
            assert np.all(best[away[inside]] + eps <= values[inside][away[inside]] + 1e-12)
            assert np.all(best <= values[inside] + 1e-12)

    def test_margin_shrinks_inside_origin_ball(self, integrator):
        cfg = SynthConfig(grid_axes=[INTEGRATOR_GRID], horizon=INTEGRATOR_HORIZON, origin_radius=0.1)
        V = synthesize_storage(integrator, cfg)
        eps = cfg.contraction_margin
        x = np.array([[0.05]])
        gap = V.penalized_values(0, x)[0] - _best_successor(integrator, V, 0, x)[0]
        assert gap >= eps * 0.25 - 1e-12
        assert gap < eps

    def test_monotone_in_time(self, vdp_storage):
        for t in range(vdp_storage.horizon):
            assert np.all(vdp_storage.stage(t).flat_values <= vdp_storage.stage(t + 1).flat_values + 1e-15)

    def test_off_grid_spot_check(self, vdp, vdp_storage):
        """格子点以外では補間誤差の範囲で蓄積性が成り立つ"""
        V = vdp_storage
        stage = V.stage(1)
        tolerance = 10.0 * stage.lipschitz_bound() * float(np.max(stage.cell_sizes))
        inputs = input_lattice(vdp, V.input_levels)
        rng = np.random.default_rng(3)
        points = sample_sublevel(V, 1, 1000, rng)
        successors = rk4_step_batch(
            vdp, np.tile(points, (len(inputs), 1)), np.repeat(inputs, len(points), axis=0)
        )
        best = V.penalized_values(2, successors).reshape(len(inputs), -1).min(axis=0)
        assert np.all(best - V.penalized_values(1, points) <= tolerance)

    def test_grid_box_must_cover_constraints(self, integrator):
        cfg = SynthConfig(grid_axes=[(-0.5, 0.5, 51)], horizon=3)
        with pytest.raises(ConfigError):
            synthesize_storage(integrator, cfg)

    def test_empty_sublevel_sets(self):
        # 終端集合が格子より細かく、格子点が 1 つも入らない
        from src.dynamics import make_scalar_integrator
        narrow = make_scalar_integrator(terminal_bound=0.001)
        cfg = SynthConfig(grid_axes=[(-1.0, 1.0, 4)], horizon=2)
        with pytest.raises(SynthesisError):
            synthesize_storage(narrow, cfg)

    def test_config_validation(self):
        with pytest.raises(ValueError):
            SynthConfig(grid_axes=[(1.0, -1.0, 10)], horizon=3)
        with pytest.raises(ValueError):
            SynthConfig(grid_axes=[(-1.0, 1.0, 10)], horizon=3, input_levels=[2])
        with pytest.raises(ValueError):
            SynthConfig(grid_axes=[(-1.0, 1.0, 10)], horizon=3, unknown=1)


class TestVerification:

    def test_samples_are_uniform_off_grid(self, integrator_storage):
        rng = np.random.default_rng(5)
        points = sample_sublevel(integrator_storage, 0, 500, rng)[:, 0]
        cells = (points + 1.0) / 0.01
        assert np.mean(np.abs(cells - np.round(cells)) > 1e-6) > 0.9
        radius = integrator_radius(0)
        assert points.min() < -0.8 * radius and points.max() > 0.8 * radius
        snapped = sample_sublevel(integrator_storage, 0, 100, rng, snap_to_grid=True)[:, 0]
        assert_allclose((snapped + 1.0) / 0.01, np.round((snapped + 1.0) / 0.01), atol=1e-9)

    def test_integrator_passes(self, integrator, integrator_storage):
        report = verify_storage(integrator, integrator_storage, samples=1000)
        assert report.storage_passed
        assert report.contraction_passed
        assert report.nonempty_passed
        assert report.passed

    def test_vdp_passes(self, vdp, vdp_storage):
        report = verify_storage(vdp, vdp_storage, samples=1000)
        assert report.passed, report.summary()

    def test_near_origin_samples(self, integrator, vdp, integrator_storage, vdp_storage):
        """原点のすぐ近くの格子点以外でも蓄積性が許容誤差内"""
        rng = np.random.default_rng(9)
        for sys, V in ((integrator, integrator_storage), (vdp, vdp_storage)):
            cell = float(np.min(V.stage(0).cell_sizes))
            points = rng.uniform(-cell, cell, size=(200, V.num_vars))
            for t in range(V.horizon):
                gaps = storage_gaps(sys, V, t, points)
                assert np.max(gaps) <= 1e-6, (sys.name, t, points[np.argmax(gaps)].tolist())

    def test_line_search_only_improves(self, vdp, vdp_storage):
        rng = np.random.default_rng(4)
        points = sample_sublevel(vdp_storage, 3, 100, rng)
        lattice_only = storage_gaps(vdp, vdp_storage, 3, points, line_search_iters=0)
        refined = storage_gaps(vdp, vdp_storage, 3, points)
        assert np.all(refined <= lattice_only + 1e-12)
        assert np.any(refined < lattice_only - 1e-9)

    def test_rejects_bad_refinement(self, integrator, integrator_storage):
        with pytest.raises(ValueError):
            verify_storage(integrator, integrator_storage, samples=10, input_refine=0)

    def test_double_integrator_passes(self):
        sys = make_double_integrator()
        cfg = SynthConfig(grid_axes=[(-1.0, 1.0, 41), (-1.0, 1.0, 41)], horizon=10)
        V = synthesize_storage(sys, cfg)
        assert verify_storage(sys, V, samples=1000).passed

    def test_reversed_stages_fail_contraction(self, integrator, integrator_storage):
        report = verify_storage(integrator, integrator_storage.reversed(), samples=500)
        assert not report.contraction_passed
        assert not report.passed

    def test_positive_storage_fails_nonempty(self, integrator):
        grid = GridFunction([(-1.0, 1.0, 11)], np.ones(11))
        V = StorageFunction([grid] * 4, meta={"input_levels": [5]})
        report = verify_storage(integrator, V, samples=100)
        assert not report.nonempty_passed
        assert report.nonempty == [False] * 4

    def test_report_rows(self, integrator, integrator_storage):
        report = verify_storage(integrator, integrator_storage, samples=100)
        rows = report.to_rows()
        assert [row["check"] for row in rows] == ["storage", "contraction", "nonempty"]
        assert "蓄積性" in report.summary()


class TestViableInput:

    def test_pulls_toward_origin(self, integrator, integrator_storage):
        # V(1, ·) の区間の端付近からは最大速度で原点へ向かう入力だけが最小
        assert 0.45 < integrator_radius(1)
        u = select_viable_input(integrator, integrator_storage, 1, [0.45], refine=False)
        assert u[0] == -1.0
        refined = select_viable_input(integrator, integrator_storage, 1, [0.45])
        assert refined[0] == pytest.approx(-1.0, abs=1e-3)

    def test_origin_stays_feasible(self, integrator, integrator_storage):
        for t in range(integrator_storage.horizon):
            u = select_viable_input(integrator, integrator_storage, t, [0.0])
            x_next = rk4_step(integrator, [0.0], u)
            assert eval_storage(integrator_storage, t + 1, x_next) <= 0.0

    def test_ties_prefer_small_input(self, integrator):
        grid = GridFunction([(-1.0, 1.0, 11)], np.full(11, -1.0))
        V = StorageFunction([grid] * 3, meta={"input_levels": [21]})
        assert_allclose(select_viable_input(integrator, V, 0, [0.3]), [0.0])

    def test_outside_sublevel_raises(self, integrator, integrator_storage):
        with pytest.raises(InfeasibleInputError) as info:
            select_viable_input(integrator, integrator_storage, 0, [0.95])
        assert info.value.value > 0.0

    def test_viability_of_terminal_set(self, vdp, vdp_storage):
        result = check_viability(vdp, vdp_storage, samples=200)
        assert result["fraction_viable"] == 1.0
        assert result["worst_value"] <= 1e-6
