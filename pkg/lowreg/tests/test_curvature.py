"""
Tests for connection, curvature and weighted operators
"""
import math
import os
import sys

import numpy as np
import pytest

# Add the app directory to the path
sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

from app.core.exceptions import DimensionBoundError, MissingProviderError
from app.core.exprparse import parse_expr
from app.models.field import ScalarField
from app.models.grid import ChartGrid
from app.services.catalog_service import catalog_service
from app.services.curvature_service import ANALYTIC, FD, curvature_service
from app.services.field_service import field_service


def build(name, nodes=41, mode=ANALYTIC):
    model = catalog_service.get(name)
    grid = catalog_service.default_grid(model, nodes=nodes)
    g, w = catalog_service.build(model, grid, mode=mode)
    return grid, g, w


def scalar(src, grid):
    return field_service.sample_field(parse_expr(src, grid.dimension), grid, name=src)


class TestChristoffel:
    """Connection coefficients"""

    def test_symmetric_in_lower_indices(self):
        _, g, _ = build("sphere_polar")
        gamma = curvature_service.christoffel(g, ANALYTIC)
        assert np.allclose(gamma.second, np.swapaxes(gamma.second, 1, 2))

    def test_sphere_symbols(self):
        grid, g, _ = build("sphere_polar")
        x1 = grid.coordinates[0]
        gamma = curvature_service.christoffel(g, ANALYTIC)
        assert np.allclose(gamma.second[0, 1, 1], -np.sin(x1) * np.cos(x1))
        assert np.allclose(gamma.second[1, 0, 1], np.cos(x1) / np.sin(x1))
        assert np.allclose(gamma.second[0, 0, 0], 0.0)

    def test_fd_agrees_with_analytic_in_interior(self):
        grid, g, _ = build("polar_flat", nodes=41)
        exact = curvature_service.christoffel(g, ANALYTIC).second
        approx = curvature_service.christoffel(g, FD, order=4).second
        inner = (slice(None),) * 3 + grid.interior_slices()
        assert np.max(np.abs(exact[inner] - approx[inner])) < 1e-6

    def test_analytic_needs_providers(self):
        grid, g, _ = build("flat")
        bare = g.with_values(g.values, providers=None)
        with pytest.raises(MissingProviderError):
            curvature_service.christoffel(bare, ANALYTIC)


class TestRicci:
    """Ricci tensor of catalog models with known curvature"""

    def test_flat_is_zero(self):
        _, g, _ = build("flat")
        for mode in (ANALYTIC, FD):
            assert np.max(np.abs(curvature_service.ricci(g, mode).values)) == 0.0

    def test_unit_sphere_is_einstein(self):
        _, g, _ = build("sphere_polar")
        ric = curvature_service.ricci(g, ANALYTIC)
        assert np.max(np.abs(ric.values - g.values)) < 1e-10

    def test_hyperbolic_plane_is_negatively_einstein(self):
        _, g, _ = build("hyperbolic_halfplane")
        ric = curvature_service.ricci(g, ANALYTIC)
        assert np.max(np.abs(ric.values + g.values)) < 1e-10

    def test_polar_coordinates_see_no_curvature(self):
        _, g, _ = build("polar_flat")
        assert np.max(np.abs(curvature_service.ricci(g, ANALYTIC).values)) < 1e-10

    def test_scalar_curvature_of_sphere(self):
        _, g, _ = build("sphere_polar")
        scal = curvature_service.scalar_curvature(g, ANALYTIC)
        assert np.allclose(scal.values, 2.0, atol=1e-10)

    def test_fd_converges_in_interior(self):
        model = catalog_service.get("sphere_polar")
        errors = []
        for nodes in (41, 81):
            grid = catalog_service.default_grid(model, nodes=nodes)
            g, _ = catalog_service.build(model, grid, mode=FD)
            ric = curvature_service.ricci(g, FD, order=4)
            inner = grid.box_mask(((0.8, 0.5), (math.pi - 0.8, 1.5)))
            errors.append(np.max(np.abs(ric.values[:, :, inner] - g.values[:, :, inner])))
        assert errors[1] < errors[0]
        assert errors[1] < 1e-3

    def test_riemann_antisymmetry(self):
        _, g, _ = build("sphere_polar")
        curv = curvature_service.curvature(g, ANALYTIC)
        assert curv.ricci_skew < 1e-10
        assert np.allclose(curv.riemann, -np.swapaxes(curv.riemann, 1, 2))


class TestWeightedOperators:
    """Gradient, divergence and Laplacian with and without a weight"""

    def test_flat_laplacian_of_quadratic(self):
        grid, g, _ = build("flat")
        f = scalar("x1^2 + x2^2", grid)
        assert np.allclose(curvature_service.laplacian(f, g, mode=ANALYTIC).values, 4.0)
        lap = curvature_service.laplacian(f, g, mode=FD, order=2).values
        assert np.allclose(lap[grid.interior_slices(3)], 4.0)

    def test_gaussian_drift_laplacian(self):
        grid, g, w = build("gaussian_weight")
        f = scalar("x1", grid)
        lap = curvature_service.laplacian(f, g, w, mode=ANALYTIC)
        assert np.allclose(lap.values, -grid.coordinates[0], atol=1e-10)

    def test_gradient_norm_on_sphere(self):
        grid, g, _ = build("sphere_polar")
        f = scalar("x2", grid)
        sq = curvature_service.gradient_norm_squared(f, g, ANALYTIC)
        assert np.allclose(sq.values, 1.0 / np.sin(grid.coordinates[0]) ** 2)

    def test_fd_gradient_of_bare_values(self):
        grid, g, _ = build("flat")
        f = ScalarField(grid=grid, values=2.0 * grid.coordinates[1], name="f")
        grad = curvature_service.grad_scalar(f, g, FD, order=2)
        assert np.allclose(grad.values[0], 0.0)
        assert np.allclose(grad.values[1], 2.0)

    def test_analytic_gradient_needs_providers(self):
        grid, g, _ = build("flat")
        f = ScalarField(grid=grid, values=np.zeros(grid.shape), name="f")
        with pytest.raises(MissingProviderError):
            curvature_service.grad_scalar(f, g, ANALYTIC)


class TestBakryEmery:
    """Weighted Ricci, the Bochner identity and the trace inequality"""

    def test_gaussian_weight_gives_unit_lower_bound(self):
        grid, g, w = build("gaussian_weight")
        ric_mu = curvature_service.bakry_emery_ricci(g, w, math.inf, ANALYTIC)
        eye = np.eye(2).reshape(2, 2, 1, 1)
        assert np.max(np.abs(ric_mu.values - eye)) < 1e-8

    def test_finite_N_subtracts_drift_square(self):
        grid, g, w = build("gaussian_weight")
        ric_mu = curvature_service.bakry_emery_ricci(g, w, 4.0, ANALYTIC)
        x1 = grid.coordinates[0]
        assert np.allclose(ric_mu.values[0, 0], 1.0 - x1 ** 2 / 2.0, atol=1e-8)

    @pytest.mark.parametrize("N", [1.0, float("nan")])
    def test_inadmissible_N(self, N):
        _, g, _ = build("flat")
        with pytest.raises(DimensionBoundError):
            curvature_service.bakry_emery_ricci(g, None, N, ANALYTIC)

    def test_N_equal_to_dimension_needs_constant_weight(self):
        _, g, w = build("gaussian_weight")
        with pytest.raises(DimensionBoundError):
            curvature_service.bakry_emery_ricci(g, w, 2.0, ANALYTIC)
        _, flat, _ = build("flat")
        ric = curvature_service.bakry_emery_ricci(flat, None, 2.0, ANALYTIC)
        assert np.max(np.abs(ric.values)) == 0.0

    def test_bochner_identity_on_sphere(self):
        grid, g, _ = build("sphere_polar")
        f = scalar("cos(x1) + sin(x1) * x2", grid)
        defect = curvature_service.bochner_defect_gradient(f, g, None, ANALYTIC)
        assert np.max(np.abs(defect.values)) < 1e-8

    def test_bochner_identity_with_weight(self):
        grid, g, w = build("gaussian_weight")
        f = scalar("x1 * x2 + x1^3", grid)
        defect = curvature_service.bochner_defect_gradient(f, g, w, ANALYTIC)
        assert np.max(np.abs(defect.values)) < 1e-7

    def test_trace_inequality_is_nonnegative(self):
        grid, g, _ = build("flat")
        f = scalar("x1^2 - 3 * x1 * x2 + x2^3", grid)
        ineq = curvature_service.hessian_trace_inequality(f, g, None, 2.0, ANALYTIC)
        assert ineq.values.min() > -1e-10

    def test_trace_inequality_with_weight(self):
        grid, g, w = build("gaussian_weight")
        f = scalar("sin(x1) * x2", grid)
        ineq = curvature_service.hessian_trace_inequality(f, g, w, 3.0, ANALYTIC)
        assert ineq.values.min() > -1e-10


class TestKinkMask:
    """Nodes near a crease of the metric are flagged"""

    def test_lipschitz_crease(self):
        grid, g, _ = build("lip_cone")
        mask = curvature_service.kink_mask(g, cells=2)
        column = int(np.argmin(np.abs(grid.axes[0])))
        assert mask[column].all()
        assert not mask[0].any()
        assert not mask[-1].any()

    def test_smooth_metric_has_no_kinks(self):
        _, g, _ = build("sphere_polar")
        assert not curvature_service.kink_mask(g).any()

    def test_grid_is_shared(self):
        grid = ChartGrid((0.0, 0.0), (1.0, 1.0), (11, 11))
        g = field_service.sample_metric([[parse_expr("1", 2), parse_expr("0", 2)], [parse_expr("0", 2), parse_expr("1", 2)]], grid)
        assert curvature_service.ricci(g, FD).grid is grid
