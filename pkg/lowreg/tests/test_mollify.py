"""
Tests for chart-local mollification and the epsilon sweeps
"""
import math
import os
import sys

import numpy as np
import pytest

# Add the app directory to the path
sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

from app.core.exceptions import InadmissibleEpsilonError
from app.core.exprparse import parse_expr
from app.models.field import ScalarField
from app.models.grid import ChartGrid
from app.services.catalog_service import catalog_service
from app.services.field_service import field_service
from app.services.mollify_service import fit_slope, is_monotone, mollify_service

REGION = ((-0.5, -0.5), (0.5, 0.5))
EPSILONS = [0.2, 0.1, 0.05]


@pytest.fixture
def grid():
    """Square [-1, 1]^2 with spacing 0.025"""
    return ChartGrid((-1.0, -1.0), (1.0, 1.0), (81, 81))


def scalar(src, grid):
    return field_service.sample_field(parse_expr(src, 2), grid, name=src)


def metric(table, grid):
    return field_service.sample_metric([[parse_expr(src, 2) for src in row] for row in table], grid)


class TestMollifier:
    """Kernel sampling and admissibility"""

    def test_stencil_has_unit_mass_and_is_symmetric(self, grid):
        m = mollify_service.mollifier(0.1, grid)
        assert m.radius_cells == (4, 4)
        assert m.stencil.sum() == pytest.approx(1.0)
        assert np.allclose(m.stencil, m.stencil[::-1, :])
        assert np.allclose(m.stencil, m.stencil.T)

    @pytest.mark.parametrize("epsilon", [0.0, -0.1])
    def test_nonpositive_epsilon(self, grid, epsilon):
        with pytest.raises(InadmissibleEpsilonError):
            mollify_service.mollifier(epsilon, grid)

    def test_stencil_wider_than_chart(self, grid):
        with pytest.raises(InadmissibleEpsilonError):
            mollify_service.mollifier(1.5, grid)

    def test_linear_functions_are_reproduced(self, grid):
        f = scalar("2 * x1 - x2 + 0.5", grid)
        m = mollify_service.mollifier(0.1, grid)
        smoothed = mollify_service.convolve_field(f, m)
        inner = m.valid_slices()
        assert np.allclose(smoothed.values[inner], f.values[inner], atol=1e-12)

    def test_compact_support_too_close_to_boundary(self, grid):
        f = field_service.restrict_compact(scalar("1", grid), 3)
        m = mollify_service.mollifier(0.2, grid)
        with pytest.raises(InadmissibleEpsilonError):
            mollify_service.convolve_field(f, m)

    def test_smoothing_bound_holds(self, grid):
        f = scalar("sign(x1) * cos(3 * x2)", grid)
        assert mollify_service.smoothing_bound_gap(f, 0.1) <= 1e-10


class TestMetricMollification:
    """Componentwise mollified metrics"""

    def test_constant_metric_is_unchanged(self, grid):
        g = metric([["2", "0.5"], ["0.5", "1"]], grid)
        g_eps = mollify_service.mollify_metric(g, 0.1)
        assert np.array_equal(g_eps.values, g.values)

    def test_lipschitz_metric_stays_positive(self, grid):
        g = metric([["1 + abs(x1)", "0"], ["0", "1 + abs(x1)"]], grid)
        g_eps = mollify_service.mollify_metric(g, 0.1)
        assert np.all(g_eps.det > 0)
        center = (40, 40)
        assert g_eps.values[(0, 0) + center] > g.values[(0, 0) + center]


class TestSweeps:
    """Friedrichs decay, the commutator and Ricci convergence"""

    def test_decay_of_linear_function(self, grid):
        f = scalar("x1", grid)
        report = mollify_service.friedrichs_decay(f, 4.0, REGION, EPSILONS, order=4)
        values = [row.value for row in report.rows]
        assert values == pytest.approx(EPSILONS, rel=1e-8)
        assert report.slope == pytest.approx(1.0, abs=1e-6)
        assert report.monotone
        assert report.rows[0].axis_values[1] == pytest.approx(0.0, abs=1e-10)

    def test_region_outside_valid_box(self, grid):
        f = scalar("x1", grid)
        with pytest.raises(InadmissibleEpsilonError):
            mollify_service.friedrichs_decay(f, 4.0, ((-0.95, -0.95), (0.95, 0.95)), EPSILONS)

    def test_bilinear_commutator_vanishes(self, grid):
        report = mollify_service.friedrichs_commutator(
            scalar("x1", grid), scalar("x2", grid), 4.0, REGION, EPSILONS, order=4
        )
        assert max(row.value_w1p for row in report.rows) < 1e-10

    def test_commutator_decays(self, grid):
        report = mollify_service.friedrichs_commutator(
            scalar("x1^2", grid), scalar("x1", grid), 4.0, REGION, EPSILONS, order=4
        )
        values = report.series()
        assert report.monotone
        assert values[-1] < values[0] / 4.0

    def test_commutator_p_below_two(self, grid):
        with pytest.raises(ValueError):
            mollify_service.friedrichs_commutator(scalar("x1", grid), scalar("x2", grid), 1.5, REGION, EPSILONS)

    def test_smooth_family_within_rate(self, grid):
        a = scalar("abs(x1)", grid)

        def a_eps(eps):
            return ScalarField(grid=grid, values=np.sqrt(grid.coordinates[0] ** 2 + eps ** 2))

        report = mollify_service.friedrichs_commutator(
            a, scalar("x2", grid), 4.0, REGION, EPSILONS, a_eps=a_eps, order=4
        )
        assert not report.rate_violation
        assert report.rate_constant <= 1.0 + 1e-9

    def test_family_breaking_the_rate(self, grid):
        a = scalar("abs(x1)", grid)

        def a_eps(eps):
            return ScalarField(grid=grid, values=a.values + eps ** 0.25)

        report = mollify_service.friedrichs_commutator(
            a, scalar("x2", grid), 4.0, REGION, EPSILONS, a_eps=a_eps, order=4
        )
        assert report.rate_violation

    def test_ricci_sweep_on_flat_metric(self, grid):
        g = metric([["1", "0"], ["0", "1"]], grid)
        report = mollify_service.ricci_mollify_convergence(g, 4.0, REGION, EPSILONS)
        assert all(row.value == 0.0 for row in report.rows)
        assert report.slope is None
        assert report.monotone


class TestConvergenceRates:
    """Measured rates on catalog metrics and a discontinuous function"""

    @staticmethod
    def inset(grid, epsilons):
        cells = [math.ceil(max(epsilons) / h - 1e-9) + 3 for h in grid.spacing]
        lo = tuple(a + c * h for a, c, h in zip(grid.lower, cells, grid.spacing))
        hi = tuple(b - c * h for b, c, h in zip(grid.upper, cells, grid.spacing))
        return lo, hi

    @pytest.mark.parametrize("name", ["c11_bump", "sphere_polar"])
    def test_ricci_mollification_converges_at_least_linearly(self, name):
        model = catalog_service.get(name)
        grid = catalog_service.default_grid(model, nodes=81)
        g, _ = catalog_service.build(model, grid, mode="fd")
        report = mollify_service.ricci_mollify_convergence(g, 4.0, self.inset(grid, EPSILONS), EPSILONS)
        assert report.monotone
        assert report.slope >= 1.0

    def test_friedrichs_decay_of_a_jump(self, grid):
        f = scalar("sign(x1)", grid)
        report = mollify_service.friedrichs_decay(f, 2.0, REGION, EPSILONS, order=4)
        values = [row.value for row in report.rows]
        assert report.monotone
        assert 0.2 < report.slope < 1.0
        assert values[-1] < 0.75 * values[0]
        assert report.rows[0].axis_values[1] == pytest.approx(0.0, abs=1e-10)


class TestSeriesHelpers:
    """Monotonicity and slope fitting"""

    def test_monotone(self):
        assert is_monotone([3.0, 2.0, 2.0, 0.0])
        assert not is_monotone([1.0, 2.0])

    def test_slope(self):
        eps = [0.4, 0.2, 0.1]
        assert fit_slope(eps, [e ** 2 for e in eps]) == pytest.approx(2.0)

    def test_slope_needs_two_positive_values(self):
        assert fit_slope([0.2, 0.1], [0.0, 1.0]) is None
