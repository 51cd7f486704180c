"""
Distributional pairings: the weak Bakry-Emery Ricci functional tested
against vector fields and test volumes, the weak Bochner identity,
lower-bound deficits, the weak BE(K, N) inequality, PSD test-field
decomposition and the volume-growth integral.

Only first derivatives of g and h enter the pairings; derivatives of
products are expanded by the product rule so that each factor can be
differentiated in its own mode.
"""
import math
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np
import structlog

from app.config import settings
from app.core.exceptions import (
    GridError,
    ModeMismatchError,
    NegativeFieldError,
    NotPositiveSemidefiniteError,
    SupportViolationError,
)
from app.core.profiles import box_cutoff_expr
from app.models.field import (
    Field,
    MetricField,
    ScalarField,
    Tensor2Field,
    VectorField,
    WeightField,
    node_coordinates,
)
from app.models.geometry import ChristoffelField
from app.models.testpair import LowerBoundSpec, TestPair
from app.schemas.reports import BEReport, PsdReport, Verdict, VolumeReport, WeakPairingReport
from app.services.curvature_service import ANALYTIC, FD, curvature_service, two_form_inner
from app.services.field_service import fd_array, field_service

logger = structlog.get_logger()

PAIRING_TERMS = ("quadratic", "gamma_dp", "gamma_dj", "weight_quadratic", "weight_ibp")
BOCHNER_TERMS = ("grad_norm", "divergence", "exterior", "hilbert_schmidt")


@dataclass(frozen=True, eq=False)
class Geometry:
    """Per-grid arrays shared by every pairing on one (g, w) problem"""

    g: MetricField
    gamma: ChristoffelField
    dg: np.ndarray
    sqrt_det: np.ndarray
    d_sqrt_det: np.ndarray
    h: np.ndarray
    dh: np.ndarray
    dV: np.ndarray
    mode: str
    order: int

    @property
    def grid(self):
        return self.g.grid

    @property
    def measure(self) -> np.ndarray:
        """h^2 sqrt|g|"""
        return self.h ** 2 * self.sqrt_det

    def integrate(self, values: np.ndarray) -> float:
        return field_service.integrate_chart(values, grid=self.grid)


@dataclass(frozen=True, eq=False)
class PsdDecomposition:
    """M_eps = phi * sum_k b_k (x) b_k with its deviation report"""

    phi: ScalarField
    b: List[VectorField]
    report: PsdReport


def partials_of(f: Field, mode: str, order: int) -> np.ndarray:
    """d[m, ...] = d_m f, exact when possible in analytic mode"""
    if mode == ANALYTIC and (f.providers is not None or f.partials is not None):
        return field_service.gradient_array(f, ANALYTIC)
    return fd_array(f.values, f.grid, f.rank, order)


def outer_with_derivative(X: np.ndarray, dX: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """M = X (x) X and dM[m] = dX[m] (x) X + X (x) dX[m]"""
    M = np.einsum("j...,k...->jk...", X, X)
    dM = np.einsum("mj...,k...->mjk...", dX, X)
    return M, dM + np.swapaxes(dM, 1, 2)


class WeakFormService:
    """Weak curvature functionals on a single chart"""

    def geometry(
        self,
        g: MetricField,
        w: Optional[WeightField] = None,
        mode: str = FD,
        order: Optional[int] = None,
    ) -> Geometry:
        """
        Per-grid arrays of (g, w) in one differentiation mode.

        Raises:
            ModeMismatchError: w was differentiated in another mode
        """
        if w is not None and w.mode != mode:
            raise ModeMismatchError(w.h.name, w.mode, mode)
        order = order or settings.fd_order
        gamma = curvature_service.christoffel(g, mode, order)
        dg = curvature_service.metric_derivatives(g, mode, order)
        sqrt_det = g.sqrt_det
        # d_i sqrt|g| = sqrt|g| * (1/2) tr(g^{-1} d_i g)
        d_sqrt_det = sqrt_det * 0.5 * np.einsum("jk...,ikj...->i...", g.inverse, dg)
        n = g.grid.dimension
        if w is None:
            h = np.ones(g.grid.shape)
            dh = np.zeros((n,) + g.grid.shape)
        else:
            h = w.h.values
            dh = w.grad_h
        dV = -2.0 * dh / h
        return Geometry(
            g=g, gamma=gamma, dg=dg, sqrt_det=sqrt_det, d_sqrt_det=d_sqrt_det,
            h=h, dh=dh, dV=dV, mode=mode, order=order,
        )

    # ------------------------------------------------------------------
    # Core functionals
    # ------------------------------------------------------------------

    def weak_tensor_pairing(
        self,
        geo: Geometry,
        M: np.ndarray,
        dM: np.ndarray,
        phi: np.ndarray,
        dphi: np.ndarray,
    ) -> Dict[str, float]:
        """
        Weak Ric_{mu,inf} applied to a symmetric 2-tensor field M^{jk} and a
        test function phi. The five integrals depend on M and phi only
        through M*phi, which makes the functional linear in that product.
        """
        G = geo.gamma.second
        Gc = geo.gamma.contracted()
        h, dh, s, ds = geo.h, geo.dh, geo.sqrt_det, geo.d_sqrt_det
        h2s = h ** 2 * s

        quad = np.einsum("jk...,skj...,s...->...", M, G, Gc) - np.einsum("jk...,skp...,pjs...->...", M, G, G)
        t1 = geo.integrate(quad * phi * h2s)

        # d_p (M phi h^2 sqrt|g|)
        dP = (
            dM * (phi * h2s)
            + M[None] * (dphi * h2s)[:, None, None]
            + M[None] * (phi * 2.0 * h * s * dh)[:, None, None]
            + M[None] * (phi * h ** 2 * ds)[:, None, None]
        )
        t2 = -geo.integrate(np.einsum("pjk...,pjk...->...", G, dP))
        t3 = geo.integrate(np.einsum("k...,jjk...->...", Gc, dP))

        weight_quad = np.einsum("jk...,j...,k...->...", M, dh, dh) + h * np.einsum(
            "jk...,s...,skj...->...", M, dh, G
        )
        t4 = 2.0 * geo.integrate(weight_quad * phi * s)

        # d_k (M h phi sqrt|g|)
        dQ = (
            dM * (h * phi * s)
            + M[None] * (dh * phi * s)[:, None, None]
            + M[None] * (h * dphi * s)[:, None, None]
            + M[None] * (h * phi * ds)[:, None, None]
        )
        t5 = 2.0 * geo.integrate(np.einsum("j...,kjk...->...", dh, dQ))
        return dict(zip(PAIRING_TERMS, (t1, t2, t3, t4, t5)))

    def tensor_deficit(
        self,
        geo: Geometry,
        M: np.ndarray,
        dM: np.ndarray,
        phi: np.ndarray,
        dphi: np.ndarray,
        spec: LowerBoundSpec,
        w: Optional[WeightField],
    ) -> Tuple[float, Dict[str, float]]:
        """Pairing minus the N-correction minus K g(M); returns (deficit, pairing terms)"""
        n = geo.grid.dimension
        curvature_service.check_dimension_bound(spec.N, n, w)
        terms = self.weak_tensor_pairing(geo, M, dM, phi, dphi)
        omega = phi * geo.measure
        deficit = sum(terms.values())
        if math.isfinite(spec.N) and spec.N > n:
            deficit -= geo.integrate(np.einsum("jk...,j...,k...->...", M, geo.dV, geo.dV) * omega) / (spec.N - n)
        deficit -= spec.K * geo.integrate(np.einsum("jk...,jk...->...", geo.g.values, M) * omega)
        return float(deficit), terms

    def _vector_data(self, t: TestPair, geo: Geometry) -> Tuple[np.ndarray, np.ndarray]:
        if t.X is not None:
            return t.X.values, partials_of(t.X, geo.mode, geo.order)
        grad = curvature_service.grad_scalar(t.f, geo.g, geo.mode, geo.order)
        return grad.values, partials_of(grad, geo.mode, geo.order)

    def _phi_data(self, t: TestPair, geo: Geometry) -> Tuple[np.ndarray, np.ndarray]:
        return t.phi.values, partials_of(t.phi, geo.mode, geo.order)

    def _check_pair(self, g: MetricField, t: TestPair) -> None:
        if not t.grid.same_as(g.grid):
            raise SupportViolationError(t.test_id, "test pair lives on a different grid")

    # ------------------------------------------------------------------
    # Quadrature defect
    # ------------------------------------------------------------------

    def _coarsen(
        self, g: MetricField, w: Optional[WeightField], t: TestPair
    ) -> Optional[Tuple[MetricField, Optional[WeightField], "TestPair"]]:
        try:
            coarse = g.grid.coarsen()
        except GridError:
            return None
        g_c = field_service.coarsen_field(g, coarse)
        w_c = field_service.coarsen_weight(w, g_c) if w is not None else None
        phi_c = field_service.coarsen_field(t.phi, coarse)
        X_c = field_service.coarsen_field(t.X, coarse) if t.X is not None else None
        f_c = field_service.coarsen_field(t.f, coarse) if t.f is not None else None
        return g_c, w_c, _CoarsePair(phi=phi_c, X=X_c, f=f_c, test_id=t.test_id)

    def quadrature_defect(
        self,
        functional: Callable[[MetricField, Optional[WeightField], "TestPair"], float],
        value: float,
        g: MetricField,
        w: Optional[WeightField],
        t: TestPair,
        scale: float,
    ) -> float:
        """
        |D_h - D_2h| on the every-other-node grid plus a safety-weighted h^2
        floor times the problem scale.
        """
        h = max(g.grid.spacing)
        floor = settings.defect_safety * h ** 2 * scale
        coarse = self._coarsen(g, w, t)
        if coarse is None:
            return floor
        coarse_value = functional(*coarse)
        return abs(value - coarse_value) + floor

    def problem_scale(self, geo: Geometry, X: np.ndarray, dX: np.ndarray, phi: np.ndarray) -> float:
        """int phi dmu * (1 + sup over supp phi of |X| + |DX|)^2"""
        mass = geo.integrate(phi * geo.measure)
        support = phi > 0
        if not np.any(support):
            return 0.0
        size = np.sqrt(np.sum(X ** 2, axis=0)) + np.sqrt(np.sum(dX ** 2, axis=(0, 1)))
        return float(mass * (1.0 + np.max(size[support])) ** 2)

    # ------------------------------------------------------------------
    # Public operations
    # ------------------------------------------------------------------

    def weak_ricci_pairing(
        self,
        g: MetricField,
        w: Optional[WeightField],
        t: TestPair,
        mode: str = FD,
        order: Optional[int] = None,
        with_defect: bool = True,
    ) -> WeakPairingReport:
        """
        The weak Ric_{mu,inf}(X, X) tested against phi h^2 sqrt|g| dx.

        Returns:
            WeakPairingReport with the five integrals and a defect estimate

        Raises:
            SupportViolationError: test objects not compactly supported
        """
        self._check_pair(g, t)
        geo = self.geometry(g, w, mode, order)
        X, dX = self._vector_data(t, geo)
        phi, dphi = self._phi_data(t, geo)
        M, dM = outer_with_derivative(X, dX)
        terms = self.weak_tensor_pairing(geo, M, dM, phi, dphi)
        defect = 0.0
        if with_defect:
            value = float(sum(terms.values()))
            defect = self.quadrature_defect(
                lambda g_, w_, t_: self.weak_ricci_pairing(g_, w_, t_, mode, geo.order, False).value,
                value, g, w, t, self.problem_scale(geo, X, dX, phi),
            )
        return WeakPairingReport.from_terms(terms, defect)

    def bochner_rhs(
        self,
        g: MetricField,
        w: Optional[WeightField],
        t: TestPair,
        mode: str = FD,
        order: Optional[int] = None,
    ) -> WeakPairingReport:
        """
        First-derivative side of the weak Bochner identity:
        -1/2 <grad|X|^2, grad phi>, div_mu X div_mu(phi X), <dX, d(phi X)>
        and -|nabla X|^2 phi, each integrated against h^2 sqrt|g| dx.
        """
        self._check_pair(g, t)
        geo = self.geometry(g, w, mode, order)
        X, dX = self._vector_data(t, geo)
        phi, dphi = self._phi_data(t, geo)
        gv, ginv, dg = g.values, g.inverse, geo.dg
        mu = geo.measure

        # d_m |X|^2
        d_sq = np.einsum("mij...,i...,j...->m...", dg, X, X) + 2.0 * np.einsum("ij...,i...,mj...->m...", gv, X, dX)
        t_grad = -0.5 * geo.integrate(np.einsum("ij...,i...,j...->...", ginv, d_sq, dphi) * mu)

        div = (
            np.einsum("ii...->...", dX)
            + np.einsum("i...,i...->...", X, geo.d_sqrt_det) / geo.sqrt_det
            + 2.0 * np.einsum("i...,i...->...", X, geo.dh) / geo.h
        )
        div_phi_x = phi * div + np.einsum("i...,i...->...", X, dphi)
        t_div = geo.integrate(div * div_phi_x * mu)

        flat = np.einsum("ki...,i...->k...", gv, X)
        d_flat = np.einsum("jki...,i...->jk...", dg, X) + np.einsum("ki...,ji...->jk...", gv, dX)
        A = d_flat - np.swapaxes(d_flat, 0, 1)
        wedge = np.einsum("j...,k...->jk...", dphi, flat)
        B = phi * A + wedge - np.swapaxes(wedge, 0, 1)
        t_ext = geo.integrate(two_form_inner(A, B, ginv) * mu)

        D = np.einsum("is...->si...", dX) + np.einsum("sip...,p...->si...", geo.gamma.second, X)
        hs = np.einsum("si...,rj...,ij...,sr...->...", D, D, ginv, gv)
        t_hs = -geo.integrate(hs * phi * mu)
        return WeakPairingReport.from_terms(dict(zip(BOCHNER_TERMS, (t_grad, t_div, t_ext, t_hs))))

    def bochner_residual(
        self,
        g: MetricField,
        w: Optional[WeightField],
        t: TestPair,
        mode: str = FD,
        order: Optional[int] = None,
    ) -> float:
        """|pairing - rhs| / (1 + |rhs|)"""
        lhs = self.weak_ricci_pairing(g, w, t, mode, order, with_defect=False).value
        rhs = self.bochner_rhs(g, w, t, mode, order).value
        return abs(lhs - rhs) / (1.0 + abs(rhs))

    def lower_bound_terms(
        self,
        g: MetricField,
        w: Optional[WeightField],
        spec: LowerBoundSpec,
        t: TestPair,
        mode: str = FD,
        order: Optional[int] = None,
        with_defect: bool = True,
    ) -> Tuple[float, Dict[str, float], float]:
        """(deficit, pairing terms, defect) for one test pair"""
        self._check_pair(g, t)
        geo = self.geometry(g, w, mode, order)
        X, dX = self._vector_data(t, geo)
        phi, dphi = self._phi_data(t, geo)
        M, dM = outer_with_derivative(X, dX)
        deficit, terms = self.tensor_deficit(geo, M, dM, phi, dphi, spec, w)
        defect = 0.0
        if with_defect:
            defect = self.quadrature_defect(
                lambda g_, w_, t_: self.lower_bound_terms(g_, w_, spec, t_, mode, geo.order, False)[0],
                deficit, g, w, t, self.problem_scale(geo, X, dX, phi),
            )
        return deficit, terms, defect

    def lower_bound_deficit(
        self,
        g: MetricField,
        w: Optional[WeightField],
        spec: LowerBoundSpec,
        t: TestPair,
        mode: str = FD,
        order: Optional[int] = None,
    ) -> float:
        """
        Signed deficit pairing - (1/(N-n)) int <grad V, X>^2 omega - K int g(X, X) omega.

        Raises:
            DimensionBoundError: N < n, or N = n with nonconstant V
        """
        return self.lower_bound_terms(g, w, spec, t, mode, order, with_defect=False)[0]

    def psd_test_decomposition(
        self,
        M: Tensor2Field,
        epsilon: float,
        order: Optional[int] = None,
    ) -> PsdDecomposition:
        """
        b_k = rows of the PSD square root of M + eps Id (nodewise eigh) and a
        cutoff phi equal to 1 on the support of M.

        Raises:
            NotPositiveSemidefiniteError: eigenvalue below -1e-10
            SupportViolationError: M has no room for a cutoff inside the interior
        """
        order = order or settings.fd_order
        grid = M.grid
        n = grid.dimension
        mats = M.as_matrices()
        eig = np.linalg.eigvalsh(mats)[..., 0]
        if np.min(eig) < -1e-10:
            index = np.unravel_index(int(np.argmin(eig)), grid.shape)
            raise NotPositiveSemidefiniteError(float(np.min(eig)), node_coordinates(grid, index))
        lam, Q = np.linalg.eigh(mats + epsilon * np.eye(n))
        root = np.einsum("...ij,...j,...kj->...ik", Q, np.sqrt(np.clip(lam, 0.0, None)), Q)
        root = np.moveaxis(root, (-2, -1), (0, 1))
        b = [VectorField(grid=grid, values=root[k].copy(), name=f"b{k + 1}") for k in range(n)]

        support = M.support_box()
        if support is None:
            phi = ScalarField(grid=grid, values=np.zeros(grid.shape), compact=True, name="phi")
            report = PsdReport(epsilon=epsilon, c0_deviation=0.0, c1_deviation=0.0, reconstruction_gap=0.0)
            return PsdDecomposition(phi=phi, b=b, report=report)
        inner_lo, inner_hi = grid.interior_box()
        widths = []
        for axis, h in enumerate(grid.spacing):
            room = min(support[0][axis] - inner_lo[axis], inner_hi[axis] - support[1][axis])
            width = min(room, 4.0 * h)
            if width < h:
                raise SupportViolationError(M.name, "support of M leaves no room for a cutoff")
            widths.append(width)
        lower = [a - wd for a, wd in zip(support[0], widths)]
        upper = [b_ + wd for b_, wd in zip(support[1], widths)]
        phi = field_service.sample_field(box_cutoff_expr(lower, upper, widths), grid, name="phi", compact=True)

        S2 = sum(np.einsum("j...,k...->jk...", bk.values, bk.values) for bk in b)
        reconstruction_gap = float(np.max(np.abs(S2 - M.values - epsilon * np.eye(n).reshape((n, n) + (1,) * n))))
        M_eps = phi.values * S2
        deviation = M_eps - M.values
        mask = grid.box_mask(support)
        c0 = float(np.max(np.sqrt(np.sum(deviation ** 2, axis=(0, 1)))[mask]))
        d_dev = fd_array(deviation, grid, 2, order)
        c1 = float(np.max(np.sqrt(np.sum(d_dev ** 2, axis=(0, 1, 2)))[mask]))
        report = PsdReport(epsilon=epsilon, c0_deviation=c0, c1_deviation=c1, reconstruction_gap=reconstruction_gap)
        logger.debug("PSD decomposition built", **report.model_dump())
        return PsdDecomposition(phi=phi, b=b, report=report)

    def psd_sufficiency_check(
        self,
        g: MetricField,
        w: Optional[WeightField],
        spec: LowerBoundSpec,
        decomposition: PsdDecomposition,
        psi: ScalarField,
        mode: str = FD,
        order: Optional[int] = None,
    ) -> Tuple[float, float]:
        """
        Deficit of M_eps = phi sum b_k b_k tested with psi, against the sum of
        the rank-one deficits of b_k tested with phi psi.

        Returns:
            (direct, summed)
        """
        geo = self.geometry(g, w, mode, order)
        phi = decomposition.phi.values
        dphi = partials_of(decomposition.phi, mode, geo.order)
        psi_v = psi.values
        dpsi = partials_of(psi, mode, geo.order)

        summed = 0.0
        S2 = 0.0
        dS2 = 0.0
        for bk in decomposition.b:
            db = fd_array(bk.values, g.grid, 1, geo.order)
            Mk, dMk = outer_with_derivative(bk.values, db)
            S2 = S2 + Mk
            dS2 = dS2 + dMk
            value, _ = self.tensor_deficit(geo, Mk, dMk, phi * psi_v, dphi * psi_v + phi * dpsi, spec, w)
            summed += value
        M_eps = phi * S2
        dM_eps = dphi[:, None, None] * S2[None] + phi * dS2
        direct, _ = self.tensor_deficit(geo, M_eps, dM_eps, psi_v, dpsi, spec, w)
        return direct, float(summed)

    def _be_terms(
        self,
        g: MetricField,
        w: Optional[WeightField],
        spec: LowerBoundSpec,
        t: "TestPair",
        mode: str,
        order: Optional[int],
    ) -> Tuple[float, float, float, float]:
        """(pairing, hessian, gradient, laplacian) integrals of the BE deficit"""
        geo = self.geometry(g, w, mode, order)
        f, phi = t.f, t.phi
        pairing = self.weak_ricci_pairing(g, w, t, mode, geo.order, with_defect=False).value
        omega = phi.values * geo.measure
        H = curvature_service.hessian_scalar(f, geo.gamma).values
        hs = np.einsum("ij...,kl...,ik...,jl...->...", H, H, g.inverse, g.inverse)
        grad_sq = curvature_service.gradient_norm_squared(f, g, mode, geo.order).values
        lap = curvature_service.laplacian(f, g, w, mode, geo.order).values
        hessian_term = geo.integrate(hs * omega)
        gradient_term = spec.K * geo.integrate(grad_sq * omega)
        laplacian_term = geo.integrate(lap ** 2 * omega) / spec.N if math.isfinite(spec.N) else 0.0
        return pairing, hessian_term, gradient_term, laplacian_term

    def be_weak_test(
        self,
        g: MetricField,
        w: Optional[WeightField],
        spec: LowerBoundSpec,
        f: ScalarField,
        phi: ScalarField,
        mode: str = FD,
        order: Optional[int] = None,
    ) -> BEReport:
        """
        Weak BE(K, N) deficit for X = grad f:
        pairing + int phi |Hess f|^2 dmu - int (K |grad f|^2 + (lap_mu f)^2 / N) phi dmu.

        Raises:
            DimensionBoundError: N < n, or N = n with nonconstant V
            SupportViolationError: f or phi not compactly supported
        """
        curvature_service.check_dimension_bound(spec.N, g.grid.dimension, w)
        t = TestPair(phi=phi, f=f, test_id=f"be:{f.name}")
        self._check_pair(g, t)
        order = order or settings.fd_order
        pairing, hessian_term, gradient_term, laplacian_term = self._be_terms(g, w, spec, t, mode, order)
        deficit = pairing + hessian_term - gradient_term - laplacian_term

        def coarse_deficit(g_, w_, t_):
            p, hs, gr, lp = self._be_terms(g_, w_, spec, t_, mode, order)
            return p + hs - gr - lp

        geo = self.geometry(g, w, mode, order)
        X, dX = self._vector_data(t, geo)
        defect = self.quadrature_defect(
            coarse_deficit, deficit, g, w, t, self.problem_scale(geo, X, dX, phi.values)
        )
        verdict = Verdict.PASS if deficit >= -defect else Verdict.FAIL
        logger.info("Weak BE test", f=f.name, deficit=deficit, defect=defect, verdict=verdict.value)
        return BEReport(
            deficit=deficit,
            defect=defect,
            pairing=pairing,
            hessian_term=hessian_term,
            gradient_term=gradient_term,
            laplacian_term=laplacian_term,
            verdict=verdict,
        )

    def volume_growth_check(self, w: Optional[WeightField], g: MetricField, vhat: ScalarField) -> VolumeReport:
        """
        int_chart exp(-Vhat^2) h^2 sqrt|g| dx, passing when at most 1.

        Raises:
            NegativeFieldError: Vhat takes negative values
        """
        if np.min(vhat.values) < 0:
            raise NegativeFieldError(vhat.name, float(np.min(vhat.values)))
        density = g.sqrt_det if w is None else w.density
        value = field_service.integrate_chart(np.exp(-vhat.values ** 2), density, grid=g.grid)
        verdict = Verdict.PASS if value <= 1.0 else Verdict.FAIL
        logger.info("Volume growth integral", value=value, verdict=verdict.value)
        return VolumeReport(value=value, verdict=verdict)


@dataclass(frozen=True, eq=False)
class _CoarsePair:
    """Test pair restricted to the coarse grid (support flags dropped)"""

    phi: ScalarField
    X: Optional[VectorField]
    f: Optional[ScalarField]
    test_id: str

    @property
    def grid(self):
        return self.phi.grid


weakform_service = WeakFormService()
