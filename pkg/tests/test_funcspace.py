import numpy as np
import pytest
from numpy.testing import assert_allclose

from src.dynamics.catalog import VDP_TERMINAL_P
from src.errors import DimensionError, NumericError
from src.funcspace import (
    GridFunction,
    Polynomial,
    StorageFunction,
    eval_function,
    eval_storage,
    graded_lex_exponents,
)


class TestPolynomial:

    def test_graded_lex_order(self):
        assert graded_lex_exponents(2, 2) == [(0, 0), (1, 0), (0, 1), (2, 0), (1, 1), (0, 2)]

    def test_constant_term_at_origin(self):
        p = Polynomial(2, [(1.0, (0, 0)), (-1.0, (2, 0)), (-3.0, (0, 2))])
        assert eval_function(p, [0.0, 0.0]) == 1.0

    def test_quadratic_form(self):
        p = Polynomial.quadratic_form(VDP_TERMINAL_P, offset=-1.0)
        assert eval_function(p, [-0.4, 0.2]) == pytest.approx(0.188652, abs=1e-9)

    def test_duplicate_terms_merge(self):
        p = Polynomial(1, [(1.0, (2,)), (2.0, (2,)), (0.5, (0,)), (-0.5, (0,))])
        assert p.terms == [(3.0, (2,))]

    def test_linear_in_coefficients(self):
        rng = np.random.default_rng(0)
        exps = graded_lex_exponents(2, 3)
        p = Polynomial(2, zip(rng.normal(size=len(exps)), exps))
        q = Polynomial(2, zip(rng.normal(size=len(exps)), exps))
        for x in rng.uniform(-1, 1, size=(20, 2)):
            combined = 2.0 * p + q.scale(-0.5)
            assert eval_function(combined, x) == pytest.approx(2.0 * p.eval(x) - 0.5 * q.eval(x))

    def test_gradient(self):
        p = Polynomial(2, [(1.0, (2, 1)), (3.0, (0, 1)), (-2.0, (1, 0))])
        # d/dx1 = 2 x1 x2 - 2, d/dx2 = x1^2 + 3
        assert_allclose(p.gradient([0.5, -1.0]), [-3.0, 3.25])

    def test_from_dense_rejects_partial_basis(self):
        with pytest.raises(DimensionError):
            Polynomial.from_dense(2, [1.0, 2.0])

    def test_terms_roundtrip(self):
        p = Polynomial(2, [(1.5, (1, 1)), (-2.0, (0, 3))])
        q = Polynomial.from_terms(2, p.to_terms())
        assert q.terms == p.terms

    def test_wrong_dimension(self):
        p = Polynomial(2, [(1.0, (1, 0))])
        with pytest.raises(DimensionError):
            eval_function(p, [1.0, 2.0, 3.0])


class TestGridFunction:

    def test_linear_interpolation(self):
        f = GridFunction([(0.0, 1.0, 2)], [0.0, 1.0])
        assert f.eval([0.25]) == pytest.approx(0.25)

    def test_reproduces_nodes(self):
        rng = np.random.default_rng(1)
        values = rng.normal(size=(5, 4))
        f = GridFunction([(-1.0, 1.0, 5), (0.0, 3.0, 4)], values)
        assert_allclose(f.eval_batch(f.grid_points()), values.ravel(), atol=1e-14)

    def test_monotone_between_nodes(self):
        f = GridFunction([(0.0, 1.0, 11)], np.linspace(0.0, 1.0, 11) ** 2)
        values = f.eval_batch(np.linspace(0.0, 1.0, 301)[:, None])
        assert np.all(np.diff(values) >= -1e-15)

    def test_clamps_and_flags_outside(self):
        f = GridFunction([(0.0, 1.0, 3)], [0.0, 0.5, 2.0])
        values, outside = f.evaluate([[1.5], [0.5]])
        assert_allclose(values, [2.0, 0.5])
        assert outside.tolist() == [True, False]

    def test_gradient_inside_cell(self):
        f = GridFunction([(0.0, 1.0, 2), (0.0, 1.0, 2)], [[0.0, 1.0], [2.0, 3.0]])
        values, grads, _ = f.value_and_gradient(np.array([[0.5, 0.5]]))
        assert values[0] == pytest.approx(1.5)
        assert_allclose(grads[0], [2.0, 1.0])

    def test_rejects_non_finite(self):
        with pytest.raises(NumericError):
            GridFunction([(0.0, 1.0, 2)], [0.0, np.nan])

    def test_size_mismatch(self):
        with pytest.raises(DimensionError):
            GridFunction([(0.0, 1.0, 3)], [0.0, 1.0])


class TestStorageFunction:

    def _constant_family(self, value: float, horizon: int = 3) -> StorageFunction:
        grid = GridFunction([(-1.0, 1.0, 5)], np.full(5, value))
        return StorageFunction([grid] * (horizon + 1))

    def test_constant_family_is_time_invariant(self):
        V = self._constant_family(-0.5)
        assert {eval_storage(V, t, [0.3]) for t in range(4)} == {-0.5}

    def test_stage_count_must_match(self):
        grid = GridFunction([(-1.0, 1.0, 5)], np.zeros(5))
        with pytest.raises(ValueError):
            StorageFunction([grid, grid], horizon=3)

    def test_stage_out_of_range(self):
        V = self._constant_family(0.0)
        with pytest.raises(IndexError):
            eval_storage(V, 4, [0.0])

    def test_mixed_carriers_rejected(self):
        grid = GridFunction([(-1.0, 1.0, 5)], np.zeros(5))
        with pytest.raises(TypeError):
            StorageFunction([grid, Polynomial.constant(1, 0.0)])

    def test_outside_box_never_certifies(self):
        V = self._constant_family(-0.5)
        assert V.contains(1, [0.0])
        assert not V.contains(1, [1.2])
        assert V.penalized_values(1, [[1.2]])[0] == pytest.approx(0.2)

    def test_penalized_gradient_outside_points_away(self):
        V = self._constant_family(-0.5)
        value, grad = V.penalized_value_and_gradient(1, [1.2])
        assert value == pytest.approx(0.2)
        assert grad[0] == pytest.approx(1.0)

    def test_grid_file_roundtrip(self, tmp_path, integrator_storage):
        path = integrator_storage.save(tmp_path / "storage.json")
        loaded = StorageFunction.load(path)
        assert loaded.horizon == integrator_storage.horizon
        assert loaded.meta == integrator_storage.meta
        for t in range(loaded.horizon + 1):
            assert_allclose(loaded.stage(t).flat_values, integrator_storage.stage(t).flat_values)

    def test_polynomial_storage(self, tmp_path):
        stages = [Polynomial.quadratic_form(np.eye(2), offset=-(0.5 + 0.1 * t)) for t in range(4)]
        V = StorageFunction(stages, meta={"box": [[-1.0, 1.0], [-1.0, 1.0]]})
        loaded = StorageFunction.load(V.save(tmp_path / "poly.json"))
        assert loaded.kind == "polynomial"
        assert eval_storage(loaded, 2, [0.3, 0.4]) == pytest.approx(0.25 - 0.7)
        lower, upper = loaded.bounding_box()
        assert_allclose(lower, [-1.0, -1.0])

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            StorageFunction.load(tmp_path / "none.json")
