"""
Tests for the weak curvature functionals and the deficit sweep
"""
import math
import os
import sys

import numpy as np
import pytest

# Add the app directory to the path
sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

from app.core.exceptions import (
    DimensionBoundError,
    ModeMismatchError,
    NegativeFieldError,
    NotPositiveSemidefiniteError,
    SupportViolationError,
)
from app.core.exprparse import parse_expr
from app.core.profiles import radial_bump_expr
from app.models.field import Tensor2Field
from app.models.grid import ChartGrid
from app.models.testpair import LowerBoundSpec, TestPair
from app.schemas.reports import Verdict
from app.services.catalog_service import catalog_service
from app.services.curvature_service import ANALYTIC, FD, curvature_service
from app.services.family_service import family_service, random_psd_tensor
from app.services.field_service import field_service
from app.services.weakform_service import PAIRING_TERMS, weakform_service


def build(name, nodes=41):
    model = catalog_service.get(name)
    grid = catalog_service.default_grid(model, nodes=nodes)
    g, w = catalog_service.build(model, grid, mode=ANALYTIC)
    return grid, g, w


def bump(grid, center, radius):
    phi = field_service.sample_field(radial_bump_expr(center, radius), grid, name="phi")
    return field_service.restrict_compact(phi, grid.margin + 2)


def pair_of(family, kind):
    return next(t for t in family if t.test_id.startswith(kind))


class TestTestPair:
    """Admissibility of test objects"""

    def test_needs_exactly_one_carrier(self):
        grid = ChartGrid((-1.0, -1.0), (1.0, 1.0), (21, 21))
        phi = bump(grid, (0.0, 0.0), 0.5)
        X = field_service.restrict_compact(
            field_service.sample_field((parse_expr("1", 2), parse_expr("0", 2)), grid), 4
        )
        with pytest.raises(SupportViolationError):
            TestPair(phi=phi)
        with pytest.raises(SupportViolationError):
            TestPair(phi=phi, f=phi, X=X)

    def test_phi_must_be_compact(self):
        grid = ChartGrid((-1.0, -1.0), (1.0, 1.0), (21, 21))
        loose = field_service.sample_field(parse_expr("1", 2), grid)
        with pytest.raises(SupportViolationError):
            TestPair(phi=loose, f=bump(grid, (0.0, 0.0), 0.5))

    def test_phi_must_be_nonnegative(self):
        grid = ChartGrid((-1.0, -1.0), (1.0, 1.0), (21, 21))
        phi = bump(grid, (0.0, 0.0), 0.5)
        negative = phi.with_values(-phi.values, compact=True)
        with pytest.raises(SupportViolationError):
            TestPair(phi=negative, f=phi)


class TestFamily:
    """Seeded default test family"""

    def test_family_is_deterministic(self):
        _, g, _ = build("flat")
        first = family_service.default_test_family(g, seed=7, members=6)
        second = family_service.default_test_family(g, seed=7, members=6)
        assert [t.test_id for t in first] == [t.test_id for t in second]
        for a, b in zip(first, second):
            assert np.array_equal(a.X.values, b.X.values)
            assert np.array_equal(a.phi.values, b.phi.values)

    def test_family_kinds_round_robin(self):
        _, g, _ = build("flat")
        family = family_service.default_test_family(g, seed=0, members=5)
        kinds = [t.test_id.split("@")[0] for t in family]
        assert kinds == ["coord1", "coord2", "rot12", "gradbump", "psd"]

    def test_members_are_compact(self):
        grid, g, _ = build("flat")
        for t in family_service.default_test_family(g, seed=1, members=5):
            assert t.phi.compact and t.X.compact
            assert np.all(t.X.values[:, grid.collar_mask()] == 0.0)

    def test_psd_tensors_are_seeded_and_semidefinite(self):
        grid, _, _ = build("flat")
        first = random_psd_tensor(grid, (0.0, 0.0), 0.4, np.random.default_rng(3))
        second = random_psd_tensor(grid, (0.0, 0.0), 0.4, np.random.default_rng(3))
        assert np.array_equal(first.values, second.values)
        assert np.linalg.eigvalsh(first.as_matrices()).min() >= -1e-12
        assert np.all(first.values[:, :, grid.collar_mask()] == 0.0)

    def test_psd_members_are_decomposition_rows(self):
        _, g, _ = build("flat")
        t = pair_of(family_service.default_test_family(g, seed=0, members=5), "psd")
        assert t.X.providers is None
        assert np.any(t.X.values != 0.0)


class TestWeakPairing:
    """Weak Ricci pairing and the weak Bochner identity"""

    def test_flat_unweighted_pairing_vanishes(self):
        _, g, _ = build("flat")
        t = family_service.default_test_family(g, seed=0, members=5)[4]
        report = weakform_service.weak_ricci_pairing(g, None, t, FD)
        assert report.term_names == list(PAIRING_TERMS)
        assert report.value == 0.0

    def test_bochner_identity_on_sphere(self):
        _, g, _ = build("sphere_polar", nodes=81)
        for t in family_service.default_test_family(g, seed=0, members=5):
            assert weakform_service.bochner_residual(g, None, t, ANALYTIC) < 1e-3

    def test_bochner_identity_with_weight(self):
        _, g, w = build("gaussian_weight", nodes=81)
        t = pair_of(family_service.default_test_family(g, seed=2, members=5), "rot12")
        assert weakform_service.bochner_residual(g, w, t, ANALYTIC) < 1e-3

    def test_pairing_matches_integrated_ricci_on_smooth_data(self):
        for name in ("sphere_polar", "gaussian_weight"):
            _, g, w = build(name, nodes=81)
            t = pair_of(family_service.default_test_family(g, seed=0, members=5), "rot12")
            pairing = weakform_service.weak_ricci_pairing(g, w, t, ANALYTIC, with_defect=False).value
            ric = curvature_service.bakry_emery_ricci(g, w, math.inf, ANALYTIC)
            geo = weakform_service.geometry(g, w, ANALYTIC)
            X = t.X.values
            direct = geo.integrate(np.einsum("ij...,i...,j...->...", ric.values, X, X) * t.phi.values * geo.measure)
            assert pairing == pytest.approx(direct, rel=1e-3)

    def test_pairing_is_quadratic_in_X(self):
        _, g, _ = build("sphere_polar")
        t = pair_of(family_service.default_test_family(g, seed=0, members=5), "coord2")
        scaled = TestPair(phi=t.phi, X=t.X.with_values(3.0 * t.X.values, compact=True), test_id="scaled")
        doubled = TestPair(phi=t.phi.with_values(2.0 * t.phi.values, compact=True), X=t.X, test_id="doubled")
        base = weakform_service.weak_ricci_pairing(g, None, t, FD, with_defect=False).value
        assert base != 0.0
        assert weakform_service.weak_ricci_pairing(g, None, scaled, FD, with_defect=False).value == pytest.approx(9.0 * base, rel=1e-10)
        assert weakform_service.weak_ricci_pairing(g, None, doubled, FD, with_defect=False).value == pytest.approx(2.0 * base, rel=1e-10)

    def test_bochner_residual_shrinks_under_refinement(self):
        residuals = []
        for nodes in (101, 201):
            grid, g, _ = build("sphere_polar", nodes=nodes)
            phi = bump(grid, (0.5 * math.pi, 1.0), 0.6)
            X = field_service.restrict_compact(
                field_service.sample_field((parse_expr("sin(x2)", 2), parse_expr("cos(x1)", 2)), grid, name="X"),
                grid.margin + 2,
            )
            residuals.append(weakform_service.bochner_residual(g, None, TestPair(phi=phi, X=X), ANALYTIC))
        assert residuals[1] <= max(residuals[0] / 2.5, 1e-11)

    def test_foreign_grid_is_rejected(self):
        _, g, _ = build("flat")
        other = ChartGrid((-1.0, -1.0), (1.0, 1.0), (21, 21))
        phi = bump(other, (0.0, 0.0), 0.5)
        with pytest.raises(SupportViolationError):
            weakform_service.weak_ricci_pairing(g, None, TestPair(phi=phi, f=phi))


class TestLowerBound:
    """Signed deficits and the sweep verdict"""

    def test_deficit_is_linear_in_K(self):
        _, g, _ = build("sphere_polar", nodes=121)
        t = pair_of(family_service.default_test_family(g, seed=0, members=5), "coord2")
        d1 = weakform_service.lower_bound_deficit(g, None, LowerBoundSpec(K=1.0), t, ANALYTIC)
        d2 = weakform_service.lower_bound_deficit(g, None, LowerBoundSpec(K=1.1), t, ANALYTIC)
        geo = weakform_service.geometry(g, None, ANALYTIC)
        gxx = g.inner(t.X.values, t.X.values)
        mass = geo.integrate(gxx * t.phi.values * geo.measure)
        assert d2 - d1 == pytest.approx(-0.1 * mass, rel=1e-9)
        assert d2 <= -0.09 * mass

    def test_N_below_dimension(self):
        _, g, _ = build("flat")
        t = family_service.default_test_family(g, seed=0, members=1)[0]
        with pytest.raises(DimensionBoundError):
            weakform_service.lower_bound_deficit(g, None, LowerBoundSpec(K=0.0, N=1.0), t)

    def test_sphere_passes_unit_bound(self):
        _, g, _ = build("sphere_polar", nodes=121)
        family = family_service.default_test_family(g, seed=0, members=5)
        report = family_service.deficit_sweep(g, None, LowerBoundSpec(K=1.0), family, ANALYTIC, model="sphere_polar")
        assert report.verdict == Verdict.PASS
        assert report.witness is None
        assert [r.test_id for r in report.records] == sorted(t.test_id for t in family)
        assert all(len(r.terms) == 9 for r in report.records)

    def test_sphere_fails_raised_bound(self):
        _, g, _ = build("sphere_polar", nodes=121)
        family = family_service.default_test_family(g, seed=0, members=5)
        report = family_service.deficit_sweep(g, None, LowerBoundSpec(K=1.1), family, ANALYTIC, model="sphere_polar")
        assert report.verdict == Verdict.FAIL
        assert report.witness is not None
        witness = next(r for r in report.records if r.test_id == report.witness)
        assert witness.value < -witness.defect

    def test_gaussian_passes_unit_bound(self):
        _, g, w = build("gaussian_weight", nodes=81)
        family = family_service.default_test_family(g, seed=0, members=5)
        report = family_service.deficit_sweep(g, w, LowerBoundSpec(K=1.0), family, ANALYTIC)
        assert report.verdict == Verdict.PASS
        for record in report.records:
            assert abs(record.value) <= record.defect
            if not record.test_id.startswith("psd"):
                assert abs(record.value) <= 1e-4

    def test_gaussian_deficit_shrinks_under_refinement(self):
        worst = []
        for nodes in (41, 81):
            _, g, w = build("gaussian_weight", nodes=nodes)
            family = family_service.default_test_family(g, seed=0, members=4)
            spec = LowerBoundSpec(K=1.0)
            worst.append(max(abs(weakform_service.lower_bound_deficit(g, w, spec, t, ANALYTIC)) for t in family))
        assert worst[1] <= worst[0] / 4.0

    def test_mixed_mode_weight_is_rejected(self):
        model = catalog_service.get("gaussian_weight")
        grid = catalog_service.default_grid(model)
        g, w = catalog_service.build(model, grid, mode=FD)
        t = family_service.default_test_family(g, seed=0, members=1)[0]
        with pytest.raises(ModeMismatchError):
            weakform_service.lower_bound_deficit(g, w, LowerBoundSpec(K=1.0), t, ANALYTIC)
        with pytest.raises(ModeMismatchError):
            weakform_service.geometry(g, w, ANALYTIC)

    def test_empty_family(self):
        _, g, _ = build("flat")
        with pytest.raises(ValueError):
            family_service.deficit_sweep(g, None, LowerBoundSpec(K=0.0), [])


class TestBakryEmeryWeak:
    """Weak BE(K, N) inequality"""

    @pytest.fixture
    def flat_pair(self):
        """Compact f and phi on the flat square"""
        grid, g, _ = build("flat")
        f = bump(grid, (0.1, -0.1), 0.6)
        phi = bump(grid, (0.0, 0.0), 0.7)
        return g, f, phi

    def test_flat_dimensional_bound(self, flat_pair):
        g, f, phi = flat_pair
        report = weakform_service.be_weak_test(g, None, LowerBoundSpec(K=0.0, N=2.0), f, phi, ANALYTIC)
        assert report.verdict == Verdict.PASS
        assert report.deficit >= -report.defect

    def test_gaussian_unit_bound(self):
        grid, g, w = build("gaussian_weight")
        f = bump(grid, (0.2, 0.0), 1.0)
        phi = bump(grid, (0.0, 0.0), 1.2)
        report = weakform_service.be_weak_test(g, w, LowerBoundSpec(K=1.0), f, phi, ANALYTIC)
        assert report.verdict == Verdict.PASS
        assert report.laplacian_term == 0.0

    def test_sphere_eigenfunction_saturates_dimensional_bound(self):
        grid, g, _ = build("sphere_polar", nodes=81)
        f = field_service.restrict_compact(
            field_service.sample_field(parse_expr("cos(x1)", 2), grid, name="cos"), grid.margin + 2
        )
        phi = bump(grid, (0.5 * math.pi, 1.0), 0.6)
        report = weakform_service.be_weak_test(g, None, LowerBoundSpec(K=1.0, N=2.0), f, phi, ANALYTIC)
        assert report.verdict == Verdict.PASS
        assert abs(report.deficit) <= 1e-3
        assert report.laplacian_term > 0.0

    def test_gaussian_with_N_equal_dimension(self):
        grid, g, w = build("gaussian_weight")
        f = bump(grid, (0.0, 0.0), 1.0)
        with pytest.raises(DimensionBoundError):
            weakform_service.be_weak_test(g, w, LowerBoundSpec(K=1.0, N=2.0), f, f, ANALYTIC)


class TestPsdDecomposition:
    """Splitting a PSD test tensor into rank-one pieces"""

    @pytest.fixture
    def tensor(self):
        """Diagonal PSD tensor supported in a disc"""
        grid = ChartGrid((-1.0, -1.0), (1.0, 1.0), (41, 41))
        phi = field_service.sample_field(radial_bump_expr((0.0, 0.0), 0.4), grid).values
        values = np.zeros((2, 2) + grid.shape)
        values[0, 0] = 2.0 * phi
        values[1, 1] = phi
        return Tensor2Field(grid=grid, values=values, symmetric=True, name="M")

    def test_reconstruction(self, tensor):
        decomposition = weakform_service.psd_test_decomposition(tensor, 1e-3)
        assert decomposition.report.reconstruction_gap < 1e-10
        assert len(decomposition.b) == 2
        assert decomposition.phi.compact

    def test_rank_one_sum_matches_direct_deficit(self, tensor):
        grid = tensor.grid
        g = field_service.sample_metric([[parse_expr("1", 2), parse_expr("0", 2)], [parse_expr("0", 2), parse_expr("1 + x1^2 / 4", 2)]], grid)
        decomposition = weakform_service.psd_test_decomposition(tensor, 1e-2)
        psi = field_service.sample_field(parse_expr("1 + x1 / 4", 2), grid, name="psi")
        direct, summed = weakform_service.psd_sufficiency_check(g, None, LowerBoundSpec(K=0.5), decomposition, psi)
        assert direct == pytest.approx(summed, rel=1e-9, abs=1e-12)

    def test_indefinite_tensor(self, tensor):
        values = tensor.values.copy()
        values[0, 0] *= -1.0
        with pytest.raises(NotPositiveSemidefiniteError):
            weakform_service.psd_test_decomposition(tensor.with_values(values), 1e-3)


class TestVolumeGrowth:
    """Chart-local volume growth integral"""

    def test_large_vhat_passes(self):
        grid, g, _ = build("flat")
        vhat = field_service.sample_field(parse_expr("3", 2), grid)
        report = weakform_service.volume_growth_check(None, g, vhat)
        assert report.value == pytest.approx(4.0 * math.exp(-9.0))
        assert report.verdict == Verdict.PASS

    def test_small_vhat_fails(self):
        grid, g, _ = build("flat")
        vhat = field_service.sample_field(parse_expr("sqrt(x1^2 + x2^2)", 2), grid)
        report = weakform_service.volume_growth_check(None, g, vhat)
        assert report.value > 1.0
        assert report.verdict == Verdict.FAIL

    def test_negative_vhat(self):
        grid, g, _ = build("flat")
        vhat = field_service.sample_field(parse_expr("x1", 2), grid)
        with pytest.raises(NegativeFieldError):
            weakform_service.volume_growth_check(None, g, vhat)
