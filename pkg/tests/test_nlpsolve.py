import numpy as np
import pytest
from numpy.testing import assert_allclose
from pydantic import ValidationError

from src.errors import DimensionError, NumericError
from src.nlpsolve import SolverConfig, minimize, multistart_lattice


def _square(z):
    return float(z[0] ** 2)


class TestScalarExamples:

    def test_unconstrained_minimum(self):
        result = minimize(_square, lambda z: float(z[0] - 2.0), [-1.0], [1.0])
        assert result.status == "converged"
        assert result.minimizer[0] == pytest.approx(0.0, abs=1e-6)
        assert result.objective == pytest.approx(0.0, abs=1e-10)

    def test_box_active(self):
        result = minimize(lambda z: float((z[0] - 2.0) ** 2), lambda z: -1.0, [-1.0], [1.0])
        assert result.feasible
        assert result.minimizer[0] == pytest.approx(1.0, abs=1e-6)
        assert result.objective == pytest.approx(1.0, abs=1e-6)

    def test_inequality_active(self):
        result = minimize(_square, lambda z: float(0.25 - z[0]), [-1.0], [1.0])
        assert result.feasible
        assert result.minimizer[0] == pytest.approx(0.25, abs=1e-6)
        assert result.constraint_value <= 1e-6

    def test_violation_decreases(self):
        result = minimize(_square, lambda z: float(0.25 - z[0]), [-1.0], [1.0])
        history = np.asarray(result.violation_history)
        assert history.size >= 1
        assert np.all(np.diff(history) <= 1e-6)

    def test_infeasible_reports_least_violation(self):
        result = minimize(_square, lambda z: float(2.0 - z[0]), [-1.0], [1.0])
        assert result.status == "infeasible"
        assert not result.feasible
        assert result.minimizer[0] == pytest.approx(1.0, abs=1e-6)
        assert result.constraint_value == pytest.approx(1.0, abs=1e-6)


class TestSolverBehaviour:

    def test_deterministic(self):
        def objective(z):
            return float((z[0] - 0.3) ** 2 + 2.0 * (z[1] + 0.1) ** 2 + z[0] * z[1])

        def constraint(z):
            return float(z[0] ** 2 + z[1] ** 2 - 0.05)

        a = minimize(objective, constraint, [-1.0, -1.0], [1.0, 1.0])
        b = minimize(objective, constraint, [-1.0, -1.0], [1.0, 1.0])
        assert a.minimizer.tobytes() == b.minimizer.tobytes()
        assert a.status == b.status

    def test_analytic_gradients_agree(self):
        cfg = SolverConfig(gradient_mode="analytic")
        result = minimize(
            _square, lambda z: float(0.25 - z[0]), [-1.0], [1.0], cfg=cfg,
            gradient=lambda z: 2.0 * z, inequality_gradient=lambda z: np.array([-1.0]),
        )
        assert result.minimizer[0] == pytest.approx(0.25, abs=1e-6)

    def test_non_finite_objective_raises(self):
        with pytest.raises(NumericError) as info:
            minimize(lambda z: float('nan'), lambda z: -1.0, [-1.0], [1.0])
        assert info.value.point is not None

    def test_non_finite_constraint_raises(self):
        with pytest.raises(NumericError):
            minimize(_square, lambda z: float('inf'), [-1.0], [1.0])

    def test_warm_start_deduplicated(self):
        result = minimize(_square, lambda z: -1.0, [-1.0], [1.0], starts=[[0.0]])
        assert result.starts_tried == 9

    def test_warm_start_only(self):
        result = minimize(_square, lambda z: -1.0, [-1.0], [1.0], starts=[[0.5]], use_lattice=False)
        assert result.starts_tried == 1
        assert result.minimizer[0] == pytest.approx(0.0, abs=1e-6)

    def test_start_dimension_mismatch(self):
        with pytest.raises(DimensionError):
            minimize(_square, lambda z: -1.0, [-1.0], [1.0], starts=[[0.0, 0.0]])

    def test_bad_box(self):
        with pytest.raises(DimensionError):
            minimize(_square, lambda z: -1.0, [1.0], [-1.0])

    def test_wall_time_recorded(self):
        result = minimize(_square, lambda z: -1.0, [-1.0], [1.0])
        assert result.wall_time > 0.0
        assert result.outer_iterations >= 1


class TestStationarity:

    def test_kink_minimum_is_converged(self):
        cfg = SolverConfig(gradient_mode="analytic")
        result = minimize(
            lambda z: float(abs(z[0] - 0.3)), lambda z: -1.0, [-1.0], [1.0], cfg=cfg,
            starts=[[0.0]], use_lattice=False,
            gradient=lambda z: np.sign(z - 0.3), inequality_gradient=lambda z: np.zeros(1),
        )
        assert result.status == "converged"
        assert result.projected_gradient_norm <= cfg.stationarity_tol
        assert result.minimizer[0] == pytest.approx(0.3, abs=1e-6)

    def test_iteration_cap_is_not_converged(self):
        # 1 反復で上限 z = 1 に着くが、勾配 0.6 が内向きに残る
        cfg = SolverConfig(max_inner_iters=1, max_outer_iters=1)
        result = minimize(lambda z: float((z[0] - 0.7) ** 2), lambda z: -1.0, [0.0], [1.0],
                          cfg=cfg, starts=[[0.0]], use_lattice=False)
        assert result.status == "max-iters"
        assert result.projected_gradient_norm == pytest.approx(0.6, abs=1e-4)
        assert result.projected_gradient_norm > cfg.stationarity_tol

    def test_smooth_minimum_reports_small_norm(self):
        result = minimize(lambda z: float((z[0] - 0.2) ** 2 + (z[1] + 0.4) ** 2),
                          lambda z: -1.0, [-1.0, -1.0], [1.0, 1.0])
        assert result.status == "converged"
        assert result.projected_gradient_norm <= 1e-6
        assert_allclose(result.minimizer, [0.2, -0.4], atol=1e-6)


class TestMultistart:

    def test_tensor_lattice(self):
        lattice = multistart_lattice(np.array([-1.0, -2.0]), np.array([1.0, 2.0]), 9)
        assert lattice.shape == (9, 2)
        assert_allclose(lattice[0], [-1.0, -2.0])
        assert_allclose(lattice[-1], [1.0, 2.0])

    def test_diagonal_in_high_dimension(self):
        lattice = multistart_lattice(-np.ones(5), np.ones(5), 9)
        assert lattice.shape == (9, 5)
        assert np.all(lattice == lattice[:, :1])

    def test_single_point_is_centre(self):
        assert_allclose(multistart_lattice(np.array([0.0]), np.array([2.0]), 1), [[1.0]])


class TestSolverConfig:

    def test_penalty_growth_must_exceed_one(self):
        with pytest.raises(ValidationError):
            SolverConfig(penalty_growth=1.0)

    def test_unknown_key(self):
        with pytest.raises(ValidationError):
            SolverConfig(max_iters=10)

    def test_gradient_mode_values(self):
        with pytest.raises(ValidationError):
            SolverConfig(gradient_mode="forward")
