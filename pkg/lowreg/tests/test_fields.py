"""
Tests for chart grids, sampled fields, finite differences and quadrature
"""
import csv
import math
import os
import sys

import numpy as np
import pytest

# Add the app directory to the path
sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

from app.core.exceptions import (
    GridError,
    MissingProviderError,
    NonPositiveWeightError,
    NotPositiveDefiniteError,
    SupportViolationError,
)
from app.core.exprparse import parse_expr
from app.models.field import ScalarField, VectorField
from app.models.grid import ChartGrid
from app.services.field_service import fd_axis, field_service


def metric(table, grid):
    n = grid.dimension
    return field_service.sample_metric([[parse_expr(src, n) for src in row] for row in table], grid)


class TestChartGrid:
    """Grid geometry and validation"""

    @pytest.fixture
    def grid(self):
        """Unit-by-two box with spacing 0.1"""
        return ChartGrid((0.0, 0.0), (1.0, 2.0), (11, 21))

    def test_spacing_and_shape(self, grid):
        assert grid.shape == (11, 21)
        assert grid.spacing == pytest.approx((0.1, 0.1))
        assert grid.dimension == 2
        assert grid.coordinates[0].shape == (11, 21)

    def test_interior_and_collar_partition_the_nodes(self, grid):
        interior = grid.interior_mask()
        assert interior.sum() == (11 - 4) * (21 - 4)
        assert np.all(interior ^ grid.collar_mask())

    @pytest.mark.parametrize(
        "lower,upper,nodes,margin",
        [
            ((0.0,), (1.0,), (4,), 2),
            ((1.0,), (0.0,), (11,), 2),
            ((0.0,), (1.0,), (11,), 1),
            ((0.0,), (1.0,), (7,), 4),
            ((0.0,) * 5, (1.0,) * 5, (5,) * 5, 2),
            ((0.0, 0.0), (1.0,), (11, 11), 2),
        ],
    )
    def test_invalid_grids(self, lower, upper, nodes, margin):
        with pytest.raises(GridError):
            ChartGrid(lower, upper, nodes, margin=margin)

    def test_coarsen(self, grid):
        coarse = grid.coarsen()
        assert coarse.nodes == (6, 11)
        assert coarse.spacing == pytest.approx((0.2, 0.2))
        np.testing.assert_allclose(coarse.axes[1], grid.axes[1][::2])

    def test_coarsen_needs_even_cell_counts(self):
        with pytest.raises(GridError):
            ChartGrid((0.0, 0.0), (1.0, 1.0), (12, 11)).coarsen()

    def test_box_slices(self, grid):
        slices = grid.box_slices(((0.2, 0.5), (0.5, 1.0)))
        assert slices == (slice(2, 6), slice(5, 11))

    def test_empty_box_is_rejected(self, grid):
        with pytest.raises(GridError):
            grid.box_slices(((0.21, 0.5), (0.29, 1.0)))

    def test_distance_to_boundary(self, grid):
        assert grid.distance_to_boundary(((0.3, 0.5), (0.6, 1.0))) == pytest.approx(0.3)


class TestSampling:
    """Evaluation of providers at the nodes"""

    @pytest.fixture
    def grid(self):
        return ChartGrid((0.0, 0.0), (1.0, 2.0), (11, 21))

    def test_scalar(self, grid):
        f = field_service.sample_field(parse_expr("x1 + 2*x2", 2), grid)
        assert isinstance(f, ScalarField)
        np.testing.assert_allclose(f.values, grid.coordinates[0] + 2 * grid.coordinates[1])

    def test_vector(self, grid):
        X = field_service.sample_field((parse_expr("x2", 2), parse_expr("-x1", 2)), grid)
        assert isinstance(X, VectorField)
        assert X.values.shape == (2, 11, 21)
        np.testing.assert_allclose(X.values[1], -grid.coordinates[0])

    def test_compact_sampling_zeroes_the_collar(self, grid):
        f = field_service.sample_field(parse_expr("1", 2), grid, compact=True)
        assert f.compact
        assert np.all(f.values[grid.collar_mask()] == 0.0)
        assert np.all(f.values[grid.interior_mask()] == 1.0)

    def test_compact_flag_is_checked(self, grid):
        with pytest.raises(SupportViolationError):
            ScalarField(grid=grid, values=np.ones(grid.shape), compact=True, name="one")

    def test_metric_inverse_and_determinant(self, grid):
        g = metric([["1", "0"], ["0", "1 + x1^2"]], grid)
        x1 = grid.coordinates[0]
        np.testing.assert_allclose(g.det, 1 + x1 ** 2)
        np.testing.assert_allclose(g.inverse[1, 1], 1 / (1 + x1 ** 2))
        np.testing.assert_allclose(g.sqrt_det, np.sqrt(1 + x1 ** 2))

    def test_indefinite_metric_is_rejected(self, grid):
        with pytest.raises(NotPositiveDefiniteError):
            metric([["1", "2"], ["2", "1"]], grid)


class TestDerivatives:
    """Finite-difference and analytic partials"""

    @pytest.fixture
    def grid(self):
        return ChartGrid((0.0, 0.0), (1.0, 2.0), (11, 21))

    def test_second_order_is_exact_on_quadratics(self, grid):
        f = field_service.sample_field(parse_expr("x1^2 + x1*x2", 2), grid)
        d1 = field_service.fd_partial(f, 0, "fd", 2)
        x1, x2 = grid.coordinates
        np.testing.assert_allclose(d1.values, 2 * x1 + x2, atol=1e-12)

    def test_fourth_order_is_exact_on_quartics_inside(self):
        h = 0.1
        x = np.linspace(0.0, 1.0, 11)
        d = fd_axis(x ** 4, 0, h, order=4)
        np.testing.assert_allclose(d[2:-2], 4 * x[2:-2] ** 3, atol=1e-11)

    def test_unsupported_order(self):
        with pytest.raises(ValueError):
            fd_axis(np.zeros(7), 0, 0.1, order=3)

    def test_analytic_partial_keeps_providers(self, grid):
        f = field_service.sample_field(parse_expr("sin(x1)*x2", 2), grid)
        d1 = field_service.fd_partial(f, 0, "analytic")
        x1, x2 = grid.coordinates
        np.testing.assert_allclose(d1.values, np.cos(x1) * x2, atol=1e-14)
        assert d1.providers is not None

    def test_analytic_needs_providers(self, grid):
        f = ScalarField(grid=grid, values=np.zeros(grid.shape), name="bare")
        with pytest.raises(MissingProviderError):
            field_service.fd_partial(f, 0, "analytic")

    def test_analytic_uses_exact_partials(self, grid):
        partials = np.stack([np.full(grid.shape, 3.0), np.zeros(grid.shape)])
        f = ScalarField(grid=grid, values=3 * grid.coordinates[0], partials=partials, name="p")
        assert np.all(field_service.fd_partial(f, 0, "analytic").values == 3.0)

    def test_hessian_is_symmetric(self, grid):
        f = field_service.sample_field(parse_expr("x1^2*x2", 2), grid)
        H = field_service.hessian_array(f, "analytic")
        np.testing.assert_allclose(H[0, 1], H[1, 0])
        np.testing.assert_allclose(H[0, 0], 2 * grid.coordinates[1])


class TestQuadrature:
    """Trapezoid integration and L^p norms"""

    @pytest.fixture
    def grid(self):
        return ChartGrid((0.0, 0.0), (1.0, 2.0), (11, 21))

    def test_integrates_linear_functions_exactly(self, grid):
        f = field_service.sample_field(parse_expr("x1", 2), grid)
        assert field_service.integrate_chart(f) == pytest.approx(1.0, abs=1e-13)
        one = field_service.sample_field(parse_expr("1", 2), grid)
        assert field_service.integrate_chart(one) == pytest.approx(2.0, abs=1e-13)

    def test_density(self, grid):
        one = np.ones(grid.shape)
        assert field_service.integrate_chart(one, 2 * one, grid=grid) == pytest.approx(4.0)

    def test_raw_arrays_need_a_grid(self, grid):
        with pytest.raises(GridError):
            field_service.integrate_chart(np.ones(grid.shape))

    def test_lp_norms_of_a_constant(self, grid):
        f = field_service.sample_field(parse_expr("3", 2), grid)
        assert field_service.lp_norm(f, 2) == pytest.approx(3 * math.sqrt(2.0))
        assert field_service.lp_norm(f, math.inf) == 3.0
        assert field_service.lp_norm(f, 1, region=((0.0, 0.0), (0.5, 1.0))) == pytest.approx(1.5)

    def test_vector_norm_is_frobenius(self, grid):
        X = field_service.sample_field((parse_expr("3", 2), parse_expr("4", 2)), grid)
        assert field_service.lp_norm(X, math.inf) == pytest.approx(5.0)


class TestCompactRestriction:
    """Smooth cutoff at the collar"""

    @pytest.fixture
    def grid(self):
        return ChartGrid((0.0, 0.0), (1.0, 2.0), (11, 21))

    def test_restriction(self, grid):
        f = field_service.sample_field(parse_expr("1 + x1*x2", 2), grid)
        r = field_service.restrict_compact(f, 3)
        assert r.compact
        assert np.all(r.values[grid.collar_mask()] == 0.0)
        inner = grid.interior_slices(4)
        np.testing.assert_allclose(r.values[inner], f.values[inner])
        assert r.providers is not None

    def test_providers_match_values(self, grid):
        f = field_service.sample_field(parse_expr("x2", 2), grid)
        r = field_service.restrict_compact(f, 3)
        again = field_service.sample_field(r.providers, grid)
        inside = grid.interior_mask()
        np.testing.assert_allclose(again.values[inside], r.values[inside], atol=1e-14)

    def test_margin_below_collar(self, grid):
        f = field_service.sample_field(parse_expr("1", 2), grid)
        with pytest.raises(GridError):
            field_service.restrict_compact(f, 1)


class TestWeight:
    """Weights h and potentials V"""

    @pytest.fixture
    def grid(self):
        return ChartGrid((0.0, 0.0), (1.0, 1.0), (11, 11))

    def test_potential_round_trip(self, grid):
        g = metric([["1", "0"], ["0", "1"]], grid)
        w = field_service.make_weight(g, V=parse_expr("x1 + x2^2", 2))
        x1, x2 = grid.coordinates
        np.testing.assert_allclose(w.V, x1 + x2 ** 2, atol=1e-12)
        np.testing.assert_allclose(w.grad_V[1], 2 * x2, atol=1e-12)
        np.testing.assert_allclose(w.density, np.exp(-(x1 + x2 ** 2)), rtol=1e-12)
        assert not w.is_constant

    def test_default_weight_is_constant(self, grid):
        g = metric([["2", "0"], ["0", "2"]], grid)
        w = field_service.make_weight(g)
        assert w.is_constant
        np.testing.assert_allclose(w.density, 2.0)

    def test_nonpositive_weight(self, grid):
        g = metric([["1", "0"], ["0", "1"]], grid)
        with pytest.raises(NonPositiveWeightError):
            field_service.make_weight(g, h=parse_expr("x1 - 0.5", 2))


class TestCoarseningAndDump:
    """Every-other-node restriction and CSV output"""

    def test_coarsen_field(self):
        grid = ChartGrid((0.0, 0.0), (1.0, 2.0), (11, 21))
        f = field_service.sample_field(parse_expr("x1*x2", 2), grid)
        c = field_service.coarsen_field(f, grid.coarsen())
        np.testing.assert_allclose(c.values, f.values[::2, ::2])
        assert c.providers == f.providers

    def test_dump_field_csv(self, tmp_path):
        grid = ChartGrid((0.0, 0.0), (1.0, 1.0), (5, 5))
        X = field_service.sample_field((parse_expr("x1", 2), parse_expr("x2", 2)), grid)
        path = field_service.dump_field_csv(X, tmp_path / "out" / "X.csv")
        with open(path, newline="") as handle:
            rows = list(csv.reader(handle))
        assert rows[0] == ["x1", "x2", "component", "value"]
        assert len(rows) == 1 + 2 * 25
        assert {row[2] for row in rows[1:]} == {"1", "2"}
        assert rows[1] == ["0.0", "0.0", "1", "0.0"]

    def test_dump_is_deterministic(self, tmp_path):
        grid = ChartGrid((0.0,), (1.0,), (7,))
        f = field_service.sample_field(parse_expr("sin(x1)", 1), grid)
        first = field_service.dump_field_csv(f, tmp_path / "a.csv").read_bytes()
        second = field_service.dump_field_csv(f, tmp_path / "b.csv").read_bytes()
        assert first == second
        assert first.splitlines()[1].endswith(b",0,0.0")
