"""
Implicit-Euler heat flow of the weighted Laplacian on a chart with a
Dirichlet collar, and the heat-flow spot checks built on it.
"""
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np
import scipy.sparse as sp
import structlog
from scipy.sparse.linalg import cg

from app.config import settings
from app.core.exceptions import InadmissibleEpsilonError, SolverConvergenceError, UncertifiedModelError
from app.models.field import MetricField, ScalarField, WeightField
from app.models.grid import ChartGrid
from app.schemas.catalog import CatalogModel
from app.schemas.reports import HeatReport, Verdict
from app.services.curvature_service import FD, curvature_service

logger = structlog.get_logger()


def _difference_1d(m: int, h: float) -> sp.csr_matrix:
    """Forward differences (m - 1) x m"""
    return sp.diags([-np.ones(m - 1), np.ones(m - 1)], [0, 1], shape=(m - 1, m)) / h


def _central_1d(m: int, h: float) -> sp.csr_matrix:
    """np.gradient-style first derivative with one-sided first-order faces"""
    D = sp.lil_matrix((m, m))
    for i in range(1, m - 1):
        D[i, i - 1] = -0.5 / h
        D[i, i + 1] = 0.5 / h
    D[0, 0], D[0, 1] = -1.0 / h, 1.0 / h
    D[m - 1, m - 2], D[m - 1, m - 1] = -1.0 / h, 1.0 / h
    return D.tocsr()


def _along(axis: int, op: sp.spmatrix, nodes: Sequence[int]) -> sp.csr_matrix:
    """Apply a 1D operator along one axis of the C-ordered node array"""
    mats = [op if a == axis else sp.identity(m, format="csr") for a, m in enumerate(nodes)]
    out = mats[0]
    for mat in mats[1:]:
        out = sp.kron(out, mat, format="csr")
    return out


def _trapezoid_1d(m: int, h: float) -> np.ndarray:
    w = np.full(m, h)
    w[0] = w[-1] = h / 2.0
    return w


class HeatOperator:
    """
    Mass D (trapezoid weights times h^2 sqrt|g|) and stiffness S with
    u^T S u = int g^{ij} d_i u d_j u dmu. Diagonal metric terms use forward
    differences with midpoint coefficients, so S has nonpositive
    off-diagonal entries for diagonal metrics; off-diagonal metric terms
    use central differences.
    """

    def __init__(self, g: MetricField, w: Optional[WeightField] = None):
        grid = g.grid
        self.grid = grid
        n = grid.dimension
        density = w.density if w is not None else g.sqrt_det
        self.mass = (grid.trapezoid_weights * density).ravel()
        ginv = g.inverse
        nodes = grid.nodes

        S = sp.csr_matrix((self.mass.size, self.mass.size))
        for a in range(n):
            h_a = grid.spacing[a]
            coeff = ginv[a, a] * density
            lo = [slice(None)] * n
            hi = [slice(None)] * n
            lo[a] = slice(None, -1)
            hi[a] = slice(1, None)
            mid = 0.5 * (coeff[tuple(lo)] + coeff[tuple(hi)])
            weights = np.ones(mid.shape)
            for b in range(n):
                w_b = np.full(nodes[b] - 1, h_a) if b == a else _trapezoid_1d(nodes[b], grid.spacing[b])
                shape = [1] * n
                shape[b] = w_b.size
                weights = weights * w_b.reshape(shape)
            edges = _difference_1d(nodes[a], h_a)
            # kron with identities keeps C order on the reduced axis
            Dif = _along(a, edges, nodes)
            S = S + Dif.T @ sp.diags((mid * weights).ravel()) @ Dif
        for a in range(n):
            for b in range(n):
                if a == b or not np.any(np.abs(ginv[a, b]) > 1e-14):
                    continue
                Ga = _along(a, _central_1d(nodes[a], grid.spacing[a]), nodes)
                Gb = _along(b, _central_1d(nodes[b], grid.spacing[b]), nodes)
                weight = (grid.trapezoid_weights * ginv[a, b] * density).ravel()
                S = S + Ga.T @ sp.diags(weight) @ Gb
        self.stiffness = S.tocsr()

        collar = grid.collar_mask().ravel()
        self.interior = np.flatnonzero(~collar)
        self.collar = np.flatnonzero(collar)
        self._S_II = self.stiffness[self.interior][:, self.interior]
        self._S_IB = self.stiffness[self.interior][:, self.collar]
        self._systems: Dict[float, sp.csr_matrix] = {}
        self.iterations = 0

    def system(self, dt: float) -> sp.csr_matrix:
        if dt not in self._systems:
            self._systems[dt] = (sp.diags(self.mass[self.interior]) + dt * self._S_II).tocsr()
        return self._systems[dt]

    def step(self, values: np.ndarray, dt: float) -> np.ndarray:
        """
        One implicit-Euler step (D + dt S) u_new = D u on the interior with
        the collar values held fixed.

        Raises:
            SolverConvergenceError: CG did not reach the tolerance in 10 N iterations
        """
        u = values.ravel()
        u_B = u[self.collar]
        rhs = self.mass[self.interior] * u[self.interior] - dt * (self._S_IB @ u_B)
        A = self.system(dt)
        maxiter = 10 * self.interior.size
        count = [0]

        def callback(_):
            count[0] += 1

        solution, info = cg(A, rhs, x0=u[self.interior], rtol=settings.cg_rtol, atol=0.0, maxiter=maxiter, callback=callback)
        self.iterations += count[0]
        if info != 0:
            residual = float(np.linalg.norm(A @ solution - rhs))
            raise SolverConvergenceError(count[0], residual)
        out = u.copy()
        out[self.interior] = solution
        return out.reshape(self.grid.shape)

    def energy(self, values: np.ndarray) -> float:
        u = values.ravel()
        return 0.5 * float(u @ (self.stiffness @ u))

    def inner(self, u: np.ndarray, v: np.ndarray) -> float:
        return float(np.sum(self.mass * u.ravel() * v.ravel()))


@dataclass
class HeatState:
    """u_t with its step history"""

    u: ScalarField
    t: float
    dt: float
    energies: List[float] = field(default_factory=list)
    max_principle_violation: float = 0.0

    @property
    def energy_monotone(self) -> bool:
        return all(b <= a * (1.0 + 1e-9) + 1e-14 for a, b in zip(self.energies, self.energies[1:]))


class HeatService:
    """Heat semigroup of Delta_mu with a Dirichlet collar"""

    def operator(self, g: MetricField, w: Optional[WeightField] = None) -> HeatOperator:
        return HeatOperator(g, w)

    def heat_step(self, u: ScalarField, g: MetricField, w: Optional[WeightField], dt: float) -> ScalarField:
        """
        One implicit-Euler step of du/dt = Delta_mu u.

        Raises:
            InadmissibleEpsilonError: dt <= 0
            SolverConvergenceError: CG did not converge
        """
        if dt <= 0:
            raise InadmissibleEpsilonError(dt, "time step must be positive")
        op = self.operator(g, w)
        return ScalarField(grid=u.grid, values=op.step(u.values, dt), name=u.name)

    def heat_flow(
        self,
        u0: ScalarField,
        g: MetricField,
        w: Optional[WeightField],
        T: float,
        steps: int,
        op: Optional[HeatOperator] = None,
    ) -> HeatState:
        """
        Iterate ``steps`` implicit-Euler steps of size T / steps, tracking the
        Dirichlet energy and the maximum-principle violation per step.
        """
        if T < 0:
            raise InadmissibleEpsilonError(T, "flow time must be nonnegative")
        op = op or self.operator(g, w)
        u = u0.values.copy()
        energies = [op.energy(u)]
        if T == 0 or steps == 0:
            return HeatState(u=u0, t=0.0, dt=0.0, energies=energies)
        dt = T / steps
        top, bottom = float(np.max(u)), float(np.min(u))
        violation = 0.0
        for _ in range(steps):
            u = op.step(u, dt)
            violation = max(violation, float(np.max(u)) - top, bottom - float(np.min(u)), 0.0)
            energies.append(op.energy(u))
        logger.debug("Heat flow done", T=T, steps=steps, cg_iterations=op.iterations, violation=violation)
        return HeatState(
            u=ScalarField(grid=u0.grid, values=u, name=f"H_t({u0.name})"),
            t=T,
            dt=dt,
            energies=energies,
            max_principle_violation=violation,
        )

    def dirichlet_energy(self, u: ScalarField, g: MetricField, w: Optional[WeightField] = None) -> float:
        """Discrete Cheeger energy 1/2 int |grad u|^2 dmu"""
        return self.operator(g, w).energy(u.values)

    def semigroup_gap(
        self, u0: ScalarField, g: MetricField, w: Optional[WeightField], T: float, steps: int
    ) -> float:
        """L2(mu) distance between flow(T) and flow(T/2) after flow(T/2); steps must be even"""
        op = self.operator(g, w)
        once = self.heat_flow(u0, g, w, T, steps, op).u
        half = self.heat_flow(u0, g, w, T / 2.0, steps // 2, op).u
        twice = self.heat_flow(half, g, w, T / 2.0, steps // 2, op).u
        diff = once.values - twice.values
        return math.sqrt(op.inner(diff, diff))

    def heat_symmetry_gap(
        self,
        u: ScalarField,
        v: ScalarField,
        g: MetricField,
        w: Optional[WeightField],
        T: float,
        steps: int,
    ) -> float:
        """|int (H u) v dmu - int u (H v) dmu|"""
        op = self.operator(g, w)
        Hu = self.heat_flow(u, g, w, T, steps, op).u.values
        Hv = self.heat_flow(v, g, w, T, steps, op).u.values
        return abs(op.inner(Hu, v.values) - op.inner(u.values, Hv))

    def deep_interior(self, grid: ChartGrid, t: float) -> np.ndarray:
        """Nodes at distance >= max(6 sqrt t, collar width) from every face"""
        reach = max(6.0 * math.sqrt(t), grid.margin * max(grid.spacing))
        mask = np.ones(grid.shape, dtype=bool)
        for axis, (ax, a, b) in enumerate(zip(grid.axes, grid.lower, grid.upper)):
            keep = (ax - a >= reach) & (b - ax >= reach)
            shape = [1] * grid.dimension
            shape[axis] = ax.size
            mask &= keep.reshape(shape)
        return mask

    def bakry_emery_gradient_check(
        self,
        model: CatalogModel,
        g: MetricField,
        w: Optional[WeightField],
        f: ScalarField,
        K: float,
        times: Sequence[float],
        dt: Optional[float] = None,
        steps_max_principle: int = 0,
    ) -> HeatReport:
        """
        max over the deep interior of |grad H_t f|^2 - e^{-2Kt} H_t |grad f|^2
        for each t, against the absolute tolerance 5 h^2 + cg_rtol.

        Raises:
            UncertifiedModelError: the model does not carry Ric_mu >= K g
        """
        if not model.certified_for(K):
            raise UncertifiedModelError(model.name, K)
        grid = g.grid
        op = self.operator(g, w)
        grad_sq = curvature_service.gradient_norm_squared(f, g, FD)
        h = max(grid.spacing)
        tolerance = 5.0 * h ** 2 + settings.cg_rtol

        violations = []
        energy_monotone = True
        mp_violation = 0.0
        for t in times:
            if t == 0:
                violations.append(0.0)
                continue
            step = dt or t / 20.0
            steps = max(1, int(round(t / step)))
            flowed = self.heat_flow(f, g, w, t, steps, op)
            flowed_sq = self.heat_flow(grad_sq, g, w, t, steps, op).u.values
            lhs = curvature_service.gradient_norm_squared(flowed.u, g, FD).values
            gap = lhs - math.exp(-2.0 * K * t) * flowed_sq
            region = self.deep_interior(grid, t)
            violations.append(float(np.max(gap[region])) if np.any(region) else 0.0)
            energy_monotone = energy_monotone and flowed.energy_monotone
            mp_violation = max(mp_violation, flowed.max_principle_violation)

        if steps_max_principle:
            step = dt or (max(times) / 20.0 if times and max(times) > 0 else 1e-3)
            long_run = self.heat_flow(f, g, w, step * steps_max_principle, steps_max_principle, op)
            mp_violation = max(mp_violation, long_run.max_principle_violation)
            energy_monotone = energy_monotone and long_run.energy_monotone

        v = 0.0
        if violations:
            v = max(violations)
        verdict = Verdict.PASS if v <= tolerance and mp_violation <= 1e-8 else Verdict.FAIL
        report = HeatReport(
            model=model.name,
            K=K,
            times=list(times),
            gradient_violation=violations,
            tolerance=tolerance,
            max_principle_violation=mp_violation,
            energy_monotone=energy_monotone,
            verdict=verdict,
        )
        logger.info("Bakry-Emery gradient check", model=model.name, K=K, worst=v, tolerance=tolerance, verdict=verdict.value)
        return report


heat_service = HeatService()
