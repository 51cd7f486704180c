"""
Chart-local mollification and the commutator/convergence sweeps
"""
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import cached_property
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
import structlog
from scipy.signal import fftconvolve

from app.config import settings
from app.core.exceptions import InadmissibleEpsilonError
from app.core.profiles import mollifier_profile
from app.models.field import Field, MetricField, ScalarField
from app.models.grid import Box, ChartGrid
from app.schemas.reports import ConvergenceReport, ConvergenceRow
from app.services.curvature_service import curvature_service
from app.services.field_service import fd_array, field_service

logger = structlog.get_logger()


@dataclass(frozen=True, eq=False)
class Mollifier:
    """
    Radial kernel rho_eps sampled on the grid spacing.

    The stencil has ceil(eps/h_i) cells on each side of the centre and is
    renormalised to discrete mass 1.
    """

    epsilon: float
    grid: ChartGrid

    def __post_init__(self):
        if not self.epsilon > 0:
            raise InadmissibleEpsilonError(self.epsilon, "epsilon must be positive")

    @cached_property
    def radius_cells(self) -> Tuple[int, ...]:
        return tuple(int(math.ceil(self.epsilon / h - 1e-9)) for h in self.grid.spacing)

    @cached_property
    def stencil(self) -> np.ndarray:
        offsets = [np.arange(-r, r + 1) * h for r, h in zip(self.radius_cells, self.grid.spacing)]
        mesh = np.meshgrid(*offsets, indexing="ij")
        r = np.sqrt(sum(c ** 2 for c in mesh)) / self.epsilon
        kernel = mollifier_profile(r)
        total = float(np.sum(kernel))
        if total <= 0:
            raise InadmissibleEpsilonError(self.epsilon, "kernel is not resolved by the grid")
        return kernel / total

    def kernel_derivative_l1(self, axis: int) -> float:
        """Discrete unit-scale L1 norm of d_axis rho (central differences of the stencil)"""
        padded = np.pad(self.stencil, 1)
        inner = tuple(slice(1, -1) for _ in range(self.grid.dimension))
        diff = np.gradient(padded, self.grid.spacing[axis], axis=axis)[inner]
        return float(self.epsilon * np.sum(np.abs(diff)))

    def valid_slices(self) -> Tuple[slice, ...]:
        """Nodes whose full stencil lies inside the chart"""
        return tuple(slice(r, m - r) for r, m in zip(self.radius_cells, self.grid.nodes))

    def valid_box(self) -> Box:
        lo = tuple(a + r * h for a, r, h in zip(self.grid.lower, self.radius_cells, self.grid.spacing))
        hi = tuple(b - r * h for b, r, h in zip(self.grid.upper, self.radius_cells, self.grid.spacing))
        return lo, hi


@dataclass(frozen=True, eq=False)
class MollifiedField:
    """Convolved field; values are exact convolutions only inside ``valid``"""

    field: Field
    mollifier: Mollifier

    @property
    def valid(self) -> Box:
        return self.mollifier.valid_box()

    @property
    def values(self) -> np.ndarray:
        return self.field.values


def fit_slope(epsilons: Sequence[float], values: Sequence[float]) -> Optional[float]:
    """Least-squares slope of log(value) against log(epsilon), skipping zeros"""
    pairs = [(e, v) for e, v in zip(epsilons, values) if v > 0 and np.isfinite(v)]
    if len(pairs) < 2:
        return None
    x = np.log([e for e, _ in pairs])
    y = np.log([v for _, v in pairs])
    slope, _ = np.polyfit(x, y, 1)
    return float(slope)


def is_monotone(values: Sequence[float], rtol: float = 1e-9) -> bool:
    """Non-increasing along the sweep (epsilon decreasing)"""
    return all(b <= a * (1 + rtol) + 1e-300 for a, b in zip(values, values[1:]))


def _contains(outer: Box, inner: Box) -> bool:
    return all(o <= i + 1e-12 for o, i in zip(outer[0], inner[0])) and all(
        i <= o + 1e-12 for o, i in zip(outer[1], inner[1])
    )


class MollifyService:
    """Mollification experiments"""

    def mollifier(self, epsilon: float, grid: ChartGrid) -> Mollifier:
        """
        Raises:
            InadmissibleEpsilonError: the stencil leaves no valid region
        """
        m = Mollifier(epsilon, grid)
        if any(2 * r >= n - 1 for r, n in zip(m.radius_cells, grid.nodes)):
            raise InadmissibleEpsilonError(epsilon, "stencil wider than the chart")
        return m

    def convolve_array(self, values: np.ndarray, m: Mollifier, rank: int = 0) -> np.ndarray:
        """Componentwise convolution with edge padding; constants pass through unchanged"""
        pad = [(0, 0)] * rank + [(r, r) for r in m.radius_cells]
        out = np.empty_like(values)
        for comp in np.ndindex(values.shape[:rank]):
            block = values[comp]
            if np.ptp(block) == 0.0:
                out[comp] = block
                continue
            padded = np.pad(block, pad[rank:], mode="edge")
            out[comp] = fftconvolve(padded, m.stencil, mode="valid")
        return out

    def convolve_field(self, T: Field, m: Mollifier) -> MollifiedField:
        """
        Convolve every component of T with rho_eps.

        Raises:
            InadmissibleEpsilonError: epsilon reaches past the chart from the
                support of a compactly supported field
        """
        if T.compact and T.support is not None:
            dist = T.grid.distance_to_boundary(T.support)
            if m.epsilon >= dist:
                raise InadmissibleEpsilonError(m.epsilon, f"support is only {dist:.4g} from the chart boundary")
        values = self.convolve_array(T.values, m, T.rank)
        field = T.with_values(values, compact=False, support=None, name=f"rho*{T.name}")
        return MollifiedField(field=field, mollifier=m)

    def mollify_metric(self, g: MetricField, epsilon: float) -> MetricField:
        """
        Componentwise g_eps = rho_eps * g (positive definite as a convex
        combination of positive definite matrices).

        Raises:
            NotPositiveDefiniteError: should sampling break positivity
        """
        m = self.mollifier(epsilon, g.grid)
        values = self.convolve_array(g.values, m, 2)
        values = 0.5 * (values + np.swapaxes(values, 0, 1))
        return MetricField(grid=g.grid, values=values, name=f"g_{epsilon:g}")

    def _check_region(self, region: Box, m: Mollifier, grid: ChartGrid, cells: int = 2) -> None:
        lo, hi = m.valid_box()
        lo = tuple(a + cells * h for a, h in zip(lo, grid.spacing))
        hi = tuple(b - cells * h for b, h in zip(hi, grid.spacing))
        if not _contains((lo, hi), region):
            raise InadmissibleEpsilonError(m.epsilon, "region K is not inside the valid convolution region")

    def _sweep(self, mollifiers: Sequence["Mollifier"], job: Callable[["Mollifier"], ConvergenceRow]) -> List[ConvergenceRow]:
        with ThreadPoolExecutor(max_workers=settings.threads) as pool:
            return list(pool.map(job, mollifiers))

    def friedrichs_decay(
        self,
        f: ScalarField,
        p: float,
        region: Box,
        epsilons: Sequence[float],
        order: Optional[int] = None,
    ) -> ConvergenceReport:
        """
        eps * ||d_j (rho_eps * f)||_{L^p(K)} per axis j over an epsilon sweep.

        The row value is the maximum over axes; the slope is fitted to it.
        """
        grid = f.grid
        order = order or settings.fd_order
        mollifiers = [self.mollifier(e, grid) for e in epsilons]
        for m in mollifiers:
            self._check_region(region, m, grid)

        def job(m: Mollifier) -> ConvergenceRow:
            c = self.convolve_array(f.values, m)
            derivs = fd_array(c, grid, 0, order)
            axis_values = [m.epsilon * field_service.lp_norm(d, p, region, grid=grid) for d in derivs]
            return ConvergenceRow(epsilon=m.epsilon, value=max(axis_values), axis_values=axis_values)

        rows = self._sweep(mollifiers, job)
        values = [row.value for row in rows]
        report = ConvergenceReport(
            experiment="friedrichs_decay",
            p=p,
            rows=rows,
            slope=fit_slope(epsilons, values),
            monotone=is_monotone(values),
        )
        logger.info("Friedrichs decay measured", slope=report.slope, monotone=report.monotone)
        return report

    def _sobolev(self, u: np.ndarray, q: float, region: Box, grid: ChartGrid, order: int) -> Tuple[float, float]:
        """(L^q norm, W^{1,q} norm = L^q + sum of L^q norms of partials) on the region"""
        base = field_service.lp_norm(u, q, region, grid=grid)
        derivs = fd_array(u, grid, 0, order)
        return base, base + sum(field_service.lp_norm(d, q, region, grid=grid) for d in derivs)

    def friedrichs_commutator(
        self,
        a: ScalarField,
        f: ScalarField,
        p: float,
        region: Box,
        epsilons: Sequence[float],
        a_eps: Optional[Callable[[float], ScalarField]] = None,
        order: Optional[int] = None,
    ) -> ConvergenceReport:
        """
        ||(a * rho)(rho * f) - rho * (a f)||_{W^{1,p/2}(K)} over an epsilon sweep.

        With ``a_eps`` the mollified coefficient is replaced by the supplied
        smooth family; its rate ||a_eps - a||_{L^p(K)} <= C eps is measured
        and a violation is logged as a warning.
        """
        if p < 2:
            raise ValueError("commutator estimates need p >= 2")
        grid = f.grid
        order = order or settings.fd_order
        q = p / 2.0
        mollifiers = [self.mollifier(e, grid) for e in epsilons]
        for m in mollifiers:
            self._check_region(region, m, grid)
        af = a.values * f.values

        def job(m: Mollifier) -> ConvergenceRow:
            coeff = a_eps(m.epsilon).values if a_eps else self.convolve_array(a.values, m)
            diff = coeff * self.convolve_array(f.values, m) - self.convolve_array(af, m)
            base, full = self._sobolev(diff, q, region, grid, order)
            return ConvergenceRow(epsilon=m.epsilon, value=base, value_w1p=full)

        rows = self._sweep(mollifiers, job)
        rate_constant = None
        rate_violation = False
        if a_eps is not None:
            ratios = [
                field_service.lp_norm(a_eps(e).values - a.values, p, region, grid=grid) / e
                for e in epsilons
            ]
            rate_constant = max(ratios)
            if ratios[-1] > 2.0 * ratios[0] + 1e-12:
                rate_violation = True
                logger.warning(
                    "a_eps family violates the linear rate",
                    ratios=ratios,
                    epsilons=list(epsilons),
                )
        values = [row.value_w1p for row in rows]
        report = ConvergenceReport(
            experiment="friedrichs_commutator",
            p=p,
            rows=rows,
            slope=fit_slope(epsilons, values),
            monotone=is_monotone(values),
            rate_constant=rate_constant,
            rate_violation=rate_violation,
        )
        logger.info("Commutator sweep done", slope=report.slope, monotone=report.monotone)
        return report

    def ricci_mollify_convergence(
        self,
        g: MetricField,
        p: float,
        region: Box,
        epsilons: Sequence[float],
        order: Optional[int] = None,
    ) -> ConvergenceReport:
        """
        ||Ric[g_eps] - rho_eps * Ric[g]||_{L^{p/2}(K)} over an epsilon sweep,
        with both Ricci tensors computed in finite-difference mode.
        """
        if p < 2:
            raise ValueError("p must be at least 2")
        grid = g.grid
        order = order or settings.fd_order
        mollifiers = [self.mollifier(e, grid) for e in epsilons]
        for m in mollifiers:
            self._check_region(region, m, grid)
        ricci = curvature_service.ricci(g, "fd", order)

        def job(m: Mollifier) -> ConvergenceRow:
            g_eps = self.mollify_metric(g, m.epsilon)
            ric_eps = curvature_service.ricci(g_eps, "fd", order)
            smoothed = self.convolve_array(ricci.values, m, 2)
            err = ric_eps.with_values(ric_eps.values - smoothed)
            return ConvergenceRow(epsilon=m.epsilon, value=field_service.lp_norm(err, p / 2.0, region))

        rows = self._sweep(mollifiers, job)
        values = [row.value for row in rows]
        report = ConvergenceReport(
            experiment="ricci_mollify_convergence",
            p=p,
            rows=rows,
            slope=fit_slope(epsilons, values),
            monotone=is_monotone(values),
        )
        logger.info("Ricci mollification sweep done", slope=report.slope, values=values)
        return report

    def smoothing_bound_gap(self, f: ScalarField, epsilon: float) -> float:
        """
        max over axes of ||d(rho * f)||_inf - ||d rho||_{L1} ||f||_inf / eps on
        nodes whose central difference stays in the valid region; <= 0 when
        the kernel-derivative bound holds.
        """
        m = self.mollifier(epsilon, f.grid)
        c = self.convolve_array(f.values, m)
        inner = tuple(slice(s.start + 1, s.stop - 1) for s in m.valid_slices())
        sup_f = float(np.max(np.abs(f.values)))
        gaps = []
        for axis in range(f.grid.dimension):
            d = np.gradient(c, f.grid.spacing[axis], axis=axis)[inner]
            bound = m.kernel_derivative_l1(axis) * sup_f / epsilon
            gaps.append(float(np.max(np.abs(d))) - bound)
        return max(gaps)


mollify_service = MollifyService()
