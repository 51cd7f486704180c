"""
Pointwise tensor calculus on a chart: connection, curvature, weighted
operators and the Bakry-Emery N-Ricci tensor.

Every operation runs in one of two derivative modes. ``analytic`` builds
the quantity symbolically from the Expr providers of its inputs and
evaluates it exactly; ``fd`` works on sampled values with finite
differences of the requested order.
"""
import math
from typing import Optional, Tuple

import numpy as np
import structlog

from app.config import settings
from app.core.exceptions import DimensionBoundError, MissingProviderError
from app.core.exprparse import (
    Expr,
    const,
    diff_expr,
    div,
    mul,
    nonsmooth_mask,
    sub,
    sum_of,
)
from app.core.symbolic import (
    christoffel_exprs,
    contract,
    evaluate_nested,
    inverse_exprs,
    log_volume_partials,
    matvec,
    metric_partials,
)
from app.models.field import (
    Field,
    MetricField,
    ScalarField,
    Tensor2Field,
    VectorField,
    WeightField,
)
from app.models.geometry import ChristoffelField, CurvatureField
from app.services.field_service import fd_array, field_service

logger = structlog.get_logger()

ANALYTIC = "analytic"
FD = "fd"


def _require(f: Field) -> None:
    if f.providers is None:
        raise MissingProviderError(f.name)


def _table(g: MetricField):
    _require(g)
    return g.providers


def _weight_expr(w: Optional[WeightField]) -> Optional[Expr]:
    """Symbolic h, or None when the weight is absent or constant"""
    if w is None or w.is_constant:
        return None
    _require(w.h)
    return w.h.providers


def two_form_inner(A: np.ndarray, B: np.ndarray, ginv: np.ndarray) -> np.ndarray:
    """Full contraction (1/2) g^{jl} g^{km} A_jk B_lm of antisymmetric component arrays"""
    return 0.5 * np.einsum("jl...,km...,jk...,lm...->...", ginv, ginv, A, B)


class CurvatureService:
    """Tensor calculus on a single chart"""

    def _order(self, order: Optional[int]) -> int:
        return order or settings.fd_order

    def metric_derivatives(self, g: MetricField, mode: str = FD, order: Optional[int] = None) -> np.ndarray:
        """dg[m, i, j] = d_m g_ij"""
        if mode == ANALYTIC:
            return evaluate_nested(metric_partials(_table(g)), g.grid.coordinates)
        return fd_array(g.values, g.grid, 2, self._order(order))

    def christoffel(self, g: MetricField, mode: str = FD, order: Optional[int] = None) -> ChristoffelField:
        """
        Christoffel symbols of both kinds.

        Args:
            g: Metric field
            mode: ``analytic`` (needs Expr providers on g) or ``fd``
            order: Finite-difference order for ``fd`` mode

        Returns:
            ChristoffelField; second kind Gamma^k_ij = g^{kl} Gamma_{ij,l}

        Raises:
            MissingProviderError: analytic mode without metric providers
        """
        order = self._order(order)
        if mode == ANALYTIC:
            providers = christoffel_exprs(_table(g))
            second = evaluate_nested(providers, g.grid.coordinates)
            first = np.einsum("lk...,kij...->ijl...", g.values, second)
        else:
            providers = None
            dg = self.metric_derivatives(g, FD, order)
            # first[i, j, l] = 1/2 (d_j g_li + d_i g_jl - d_l g_ij)
            first = 0.5 * (
                np.einsum("jli...->ijl...", dg)
                + np.einsum("ijl...->ijl...", dg)
                - np.einsum("lij...->ijl...", dg)
            )
            second = np.einsum("kl...,ijl...->kij...", g.inverse, first)
        return ChristoffelField(
            metric=g, second=second, first=first, mode=mode, order=order, providers=providers
        )

    def christoffel_derivatives(self, gamma: ChristoffelField) -> np.ndarray:
        """dG[m, k, i, j] = d_m Gamma^k_ij"""
        grid = gamma.grid
        if gamma.mode == ANALYTIC and gamma.providers is not None:
            n = grid.dimension
            providers = tuple(
                tuple(
                    tuple(tuple(diff_expr(gamma.providers[k][i][j], m + 1) for j in range(n)) for i in range(n))
                    for k in range(n)
                )
                for m in range(n)
            )
            return evaluate_nested(providers, grid.coordinates)
        return fd_array(gamma.second, grid, 3, gamma.order)

    def riemann(self, gamma: ChristoffelField) -> CurvatureField:
        """
        Riemann tensor R^l_ijk from the connection and its first derivatives,
        together with the Ricci trace R^p_pjk.

        In fd mode the derivative of Gamma is a finite difference of the
        sampled symbols, never a second difference of g.
        """
        G = gamma.second
        dG = self.christoffel_derivatives(gamma)
        R = (
            np.einsum("iljk...->lijk...", dG)
            - np.einsum("jlik...->lijk...", dG)
            + np.einsum("skj...,lis...->lijk...", G, G)
            - np.einsum("ski...,ljs...->lijk...", G, G)
        )
        trace = np.einsum("ppjk...->jk...", R)
        skew = float(np.max(np.abs(trace - np.swapaxes(trace, 0, 1)))) if trace.size else 0.0
        ricci = Tensor2Field(
            grid=gamma.grid,
            values=0.5 * (trace + np.swapaxes(trace, 0, 1)),
            symmetric=True,
            name="Ric",
        )
        logger.debug("Curvature computed", mode=gamma.mode, ricci_skew=skew)
        return CurvatureField(christoffel=gamma, riemann=R, ricci=ricci, ricci_skew=skew)

    def curvature(self, g: MetricField, mode: str = FD, order: Optional[int] = None) -> CurvatureField:
        return self.riemann(self.christoffel(g, mode, order))

    def ricci(self, g: MetricField, mode: str = FD, order: Optional[int] = None) -> Tensor2Field:
        """Symmetric Ricci tensor Ric_jk = R^p_pjk"""
        return self.curvature(g, mode, order).ricci

    def scalar_curvature(self, g: MetricField, mode: str = FD, order: Optional[int] = None) -> ScalarField:
        ric = self.ricci(g, mode, order)
        values = np.einsum("jk...,jk...->...", g.inverse, ric.values)
        return ScalarField(grid=g.grid, values=values, name="scal")

    def lower_index(self, X: VectorField, g: MetricField) -> VectorField:
        """Covector components X_k = g_ki X^i (stored as a vector-shaped field)"""
        providers = None
        if X.providers is not None and g.providers is not None:
            providers = matvec(g.providers, X.providers)
        values = np.einsum("ki...,i...->k...", g.values, X.values)
        return VectorField(grid=g.grid, values=values, providers=providers, name=f"{X.name}_flat")

    def raise_index(self, a: VectorField, g: MetricField) -> VectorField:
        """Vector components a^k = g^{ki} a_i"""
        providers = None
        if a.providers is not None and g.providers is not None:
            providers = matvec(inverse_exprs(g.providers), a.providers)
        values = np.einsum("ki...,i...->k...", g.inverse, a.values)
        return VectorField(grid=g.grid, values=values, providers=providers, name=f"{a.name}_sharp")

    def grad_scalar(
        self, f: ScalarField, g: MetricField, mode: str = FD, order: Optional[int] = None
    ) -> VectorField:
        """Gradient (grad f)^k = g^{ki} d_i f"""
        n = g.grid.dimension
        if mode == ANALYTIC:
            _require(f)
            ginv = inverse_exprs(_table(g))
            providers = matvec(ginv, [diff_expr(f.providers, i + 1) for i in range(n)])
            values = evaluate_nested(providers, g.grid.coordinates)
            return VectorField(grid=g.grid, values=values, providers=providers, name=f"grad({f.name})")
        df = field_service.gradient_array(f, FD, self._order(order))
        values = np.einsum("ki...,i...->k...", g.inverse, df)
        return VectorField(grid=g.grid, values=values, name=f"grad({f.name})")

    def gradient_norm_squared(
        self, f: ScalarField, g: MetricField, mode: str = FD, order: Optional[int] = None
    ) -> ScalarField:
        """|grad f|^2 = d_i f g^{ij} d_j f"""
        n = g.grid.dimension
        if mode == ANALYTIC:
            _require(f)
            df = [diff_expr(f.providers, i + 1) for i in range(n)]
            provider = contract(inverse_exprs(_table(g)), df, df)
            return field_service.sample_field(provider, g.grid, name=f"|grad {f.name}|^2")
        df = field_service.gradient_array(f, FD, self._order(order))
        return ScalarField(grid=g.grid, values=g.inverse_inner(df, df), name=f"|grad {f.name}|^2")

    def hessian_scalar(self, f: ScalarField, gamma: ChristoffelField) -> Tensor2Field:
        """Covariant Hessian d_ij f - Gamma^s_ij d_s f, in the mode of ``gamma``"""
        grid = gamma.grid
        n = grid.dimension
        if gamma.mode == ANALYTIC:
            _require(f)
            G = gamma.providers
            df = [diff_expr(f.providers, i + 1) for i in range(n)]
            providers = tuple(
                tuple(
                    sub(diff_expr(df[i], j + 1), sum_of([mul(G[s][i][j], df[s]) for s in range(n)]))
                    for j in range(n)
                )
                for i in range(n)
            )
            values = evaluate_nested(providers, grid.coordinates)
        else:
            df = field_service.gradient_array(f, FD, gamma.order)
            second = field_service.hessian_array(f, FD, gamma.order)
            values = second - np.einsum("sij...,s...->ij...", gamma.second, df)
        values = 0.5 * (values + np.swapaxes(values, 0, 1))
        return Tensor2Field(grid=grid, values=values, symmetric=True, name=f"Hess({f.name})")

    def divergence_weighted(
        self,
        X: VectorField,
        g: MetricField,
        w: Optional[WeightField] = None,
        mode: str = FD,
        order: Optional[int] = None,
    ) -> ScalarField:
        """
        Weighted divergence div_mu X = d_i X^i + X^i d_i log sqrt|g| + 2 X^i d_i h / h.

        With ``w`` absent (or h constant) this is the Riemannian divergence.
        """
        grid = g.grid
        n = grid.dimension
        if mode == ANALYTIC:
            _require(X)
            log_vol = log_volume_partials(_table(g))
            h = _weight_expr(w)
            terms = []
            for i in range(n):
                Xi = X.providers[i]
                terms.append(diff_expr(Xi, i + 1))
                terms.append(mul(Xi, log_vol[i]))
                if h is not None:
                    terms.append(div(mul(const(2.0), mul(Xi, diff_expr(h, i + 1))), h))
            return field_service.sample_field(sum_of(terms), grid, name=f"div({X.name})")
        order = self._order(order)
        dX = fd_array(X.values, grid, 1, order)
        values = np.einsum("ii...->...", dX)
        dg = self.metric_derivatives(g, FD, order)
        log_vol = 0.5 * np.einsum("jk...,ikj...->i...", g.inverse, dg)
        values = values + np.einsum("i...,i...->...", X.values, log_vol)
        if w is not None and not w.is_constant:
            values = values + 2.0 * np.einsum("i...,i...->...", X.values, w.grad_h) / w.h.values
        return ScalarField(grid=grid, values=values, name=f"div({X.name})")

    def laplacian(
        self,
        f: ScalarField,
        g: MetricField,
        w: Optional[WeightField] = None,
        mode: str = FD,
        order: Optional[int] = None,
    ) -> ScalarField:
        """Weighted Laplacian as the weighted divergence of the gradient"""
        field = self.divergence_weighted(self.grad_scalar(f, g, mode, order), g, w, mode, order)
        return field.with_values(field.values, providers=field.providers, name=f"lap({f.name})")

    def covariant_derivative_vector(
        self, X: VectorField, gamma: ChristoffelField
    ) -> Tuple[Tensor2Field, ScalarField]:
        """
        Covariant derivative (nabla X)^s_i = d_i X^s + Gamma^s_ip X^p and its
        Hilbert-Schmidt norm (nabla X)^s_i (nabla X)^r_j g^{ij} g_sr.
        """
        grid = gamma.grid
        n = grid.dimension
        g = gamma.metric
        if gamma.mode == ANALYTIC:
            _require(X)
            G = gamma.providers
            providers = tuple(
                tuple(
                    sum_of(
                        [diff_expr(X.providers[s], i + 1)]
                        + [mul(G[s][i][p], X.providers[p]) for p in range(n)]
                    )
                    for i in range(n)
                )
                for s in range(n)
            )
            D = evaluate_nested(providers, grid.coordinates)
        else:
            providers = None
            dX = fd_array(X.values, grid, 1, gamma.order)
            D = np.einsum("is...->si...", dX) + np.einsum("sip...,p...->si...", gamma.second, X.values)
        hs = np.einsum("si...,rj...,ij...,sr...->...", D, D, g.inverse, g.values)
        nabla = Tensor2Field(grid=grid, values=D, providers=providers, name=f"nabla({X.name})")
        return nabla, ScalarField(grid=grid, values=hs, name=f"|nabla {X.name}|^2")

    def exterior_derivative(
        self, X: VectorField, g: MetricField, mode: str = FD, order: Optional[int] = None
    ) -> np.ndarray:
        """Components A_jk = d_j X_k - d_k X_j of d(X flat), shape (n, n, *grid)"""
        flat = self.lower_index(X, g)
        if mode == ANALYTIC:
            _require(X)
            _require(g)
            n = g.grid.dimension
            dflat = evaluate_nested(
                tuple(tuple(diff_expr(flat.providers[k], j + 1) for k in range(n)) for j in range(n)),
                g.grid.coordinates,
            )
        else:
            dflat = fd_array(flat.values, g.grid, 1, self._order(order))
        return dflat - np.swapaxes(dflat, 0, 1)

    def one_form_exterior(
        self, X: VectorField, g: MetricField, mode: str = FD, order: Optional[int] = None
    ) -> ScalarField:
        """|d(X flat)|^2 with the full antisymmetric contraction"""
        A = self.exterior_derivative(X, g, mode, order)
        return ScalarField(grid=g.grid, values=two_form_inner(A, A, g.inverse), name=f"|d{X.name}|^2")

    def check_dimension_bound(self, N: float, n: int, w: Optional[WeightField]) -> None:
        """
        Raises:
            DimensionBoundError: N < n, or N = n with a nonconstant weight
        """
        if math.isnan(N) or N < n:
            raise DimensionBoundError(N, n, "N must be at least the dimension")
        if N == n and w is not None and not w.is_constant:
            raise DimensionBoundError(N, n, "N = n admits only constant V")

    def weight_derivatives(
        self, w: Optional[WeightField], gamma: ChristoffelField
    ) -> Tuple[np.ndarray, np.ndarray]:
        """Coordinate gradient dV and covariant Hessian of V (zeros without a weight)"""
        grid = gamma.grid
        n = grid.dimension
        if w is None or w.is_constant:
            return np.zeros((n,) + grid.shape), np.zeros((n, n) + grid.shape)
        dV = w.grad_V
        hess = w.hess_V - np.einsum("sij...,s...->ij...", gamma.second, dV)
        return dV, 0.5 * (hess + np.swapaxes(hess, 0, 1))

    def bakry_emery_ricci(
        self,
        g: MetricField,
        w: Optional[WeightField],
        N: float = math.inf,
        mode: str = FD,
        order: Optional[int] = None,
        curvature: Optional[CurvatureField] = None,
    ) -> Tensor2Field:
        """
        Ric + Hess V - dV (x) dV / (N - n); the last term is dropped for N = inf.

        Raises:
            DimensionBoundError: N < n, or N = n with nonconstant V
        """
        n = g.grid.dimension
        self.check_dimension_bound(N, n, w)
        curvature = curvature or self.curvature(g, mode, order)
        dV, hess_V = self.weight_derivatives(w, curvature.christoffel)
        values = curvature.ricci.values + hess_V
        if math.isfinite(N) and N > n:
            values = values - np.einsum("i...,j...->ij...", dV, dV) / (N - n)
        values = 0.5 * (values + np.swapaxes(values, 0, 1))
        return Tensor2Field(grid=g.grid, values=values, symmetric=True, name="Ric_mu")

    def bochner_defect_gradient(
        self,
        f: ScalarField,
        g: MetricField,
        w: Optional[WeightField] = None,
        mode: str = FD,
        order: Optional[int] = None,
    ) -> ScalarField:
        """
        Nodewise weighted Bochner defect for a gradient field:
        1/2 lap_mu |grad f|^2 - <grad f, grad lap_mu f> - |Hess f|^2 - Ric_mu(grad f, grad f).
        """
        order = self._order(order)
        curv = self.curvature(g, mode, order)
        grad = self.grad_scalar(f, g, mode, order)
        sq = self.gradient_norm_squared(f, g, mode, order)
        lap_sq = self.laplacian(sq, g, w, mode, order)
        lap_f = self.laplacian(f, g, w, mode, order)
        d_lap = field_service.gradient_array(lap_f, mode, order)
        cross = np.einsum("j...,j...->...", grad.values, d_lap)
        H = self.hessian_scalar(f, curv.christoffel).values
        hs = np.einsum("ij...,kl...,ik...,jl...->...", H, H, g.inverse, g.inverse)
        ric = self.bakry_emery_ricci(g, w, math.inf, mode, order, curvature=curv).values
        ric_term = np.einsum("jk...,j...,k...->...", ric, grad.values, grad.values)
        values = 0.5 * lap_sq.values - cross - hs - ric_term
        return ScalarField(grid=g.grid, values=values, name=f"bochner({f.name})")

    def hessian_trace_inequality(
        self,
        f: ScalarField,
        g: MetricField,
        w: Optional[WeightField],
        N: float,
        mode: str = FD,
        order: Optional[int] = None,
    ) -> ScalarField:
        """
        |Hess f|^2 - (lap_mu f)^2 / N + <grad V, grad f>^2 / (N - n), which is
        nonnegative pointwise for N > n (and for N = n with constant V).
        """
        n = g.grid.dimension
        self.check_dimension_bound(N, n, w)
        gamma = self.christoffel(g, mode, order)
        H = self.hessian_scalar(f, gamma).values
        hs = np.einsum("ij...,kl...,ik...,jl...->...", H, H, g.inverse, g.inverse)
        lap = self.laplacian(f, g, w, mode, order).values
        df = field_service.gradient_array(f, mode, self._order(order))
        dV, _ = self.weight_derivatives(w, gamma)
        drift = g.inverse_inner(dV, df)
        values = hs.copy()
        if math.isfinite(N):
            values = values - lap ** 2 / N
            if N > n:
                values = values + drift ** 2 / (N - n)
        return ScalarField(grid=g.grid, values=values, name=f"trace_ineq({f.name})")

    def kink_mask(self, g: MetricField, w: Optional[WeightField] = None, cells: int = 3) -> np.ndarray:
        """
        Nodes within ``cells`` spacings of a kink of abs/max/min/sign/step in
        the metric or weight providers; excluded from sup-norm checks.
        """
        grid = g.grid
        mask = np.zeros(grid.shape, dtype=bool)
        atol = cells * max(grid.spacing)
        exprs = []
        if g.providers is not None:
            exprs.extend(e for row in g.providers for e in row)
        if w is not None and w.h.providers is not None:
            exprs.append(w.h.providers)
        for e in exprs:
            mask |= nonsmooth_mask(e, grid.coordinates, atol)
        return mask


curvature_service = CurvatureService()
