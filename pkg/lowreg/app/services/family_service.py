"""
Seeded families of test pairs and lower-bound deficit sweeps
"""
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
import structlog

from app.config import settings
from app.core.exceptions import GridError
from app.core.exprparse import ONE, ZERO, Expr, const, diff_expr, neg, sub, var
from app.core.profiles import gaussian_expr, radial_bump_expr
from app.models.field import MetricField, Tensor2Field, VectorField, WeightField
from app.models.grid import ChartGrid
from app.models.testpair import LowerBoundSpec, TestPair
from app.schemas.reports import DeficitRecord, DeficitSweepReport, Verdict
from app.services.curvature_service import FD
from app.services.field_service import field_service
from app.services.weakform_service import weakform_service

logger = structlog.get_logger()

ExprBuilder = Callable[[Tuple[float, ...], np.random.Generator], Tuple[Expr, ...]]
VectorBuilder = Callable[[ChartGrid, Tuple[float, ...], float, np.random.Generator, str], VectorField]

PSD_EPSILON = 0.05


def _sampled(build_exprs: ExprBuilder) -> VectorBuilder:
    def build(grid, center, radius, rng, name):
        return field_service.sample_field(build_exprs(center, rng), grid, name=name)

    return build


def _coordinate(axis: int, n: int) -> ExprBuilder:
    def build(center, rng):
        return tuple(ONE if i == axis else ZERO for i in range(n))

    return build


def _rotation(a: int, b: int, n: int) -> ExprBuilder:
    def build(center, rng):
        comps = [ZERO] * n
        comps[a] = neg(sub(var(b + 1), const(center[b])))
        comps[b] = sub(var(a + 1), const(center[a]))
        return tuple(comps)

    return build


def _bump_gradient(n: int, width: float) -> ExprBuilder:
    def build(center, rng):
        bump = gaussian_expr(center, width)
        return tuple(diff_expr(bump, i + 1) for i in range(n))

    return build


def random_psd_tensor(grid: ChartGrid, center: Tuple[float, ...], radius: float, rng: np.random.Generator) -> Tensor2Field:
    """
    M = sum_r bump_r v_r v_r^T with n seeded directions v_r and bumps of
    radius radius / 2 around jittered copies of ``center``.
    """
    n = grid.dimension
    values = np.zeros((n, n) + grid.shape)
    for _ in range(n):
        v = rng.normal(size=n)
        shift = rng.uniform(-0.1, 0.1, size=n) * radius
        bump = field_service.sample_field(
            radial_bump_expr(tuple(c + s for c, s in zip(center, shift)), 0.5 * radius), grid
        ).values
        values += np.einsum("i,j->ij", v, v).reshape((n, n) + (1,) * n) * bump
    return Tensor2Field(grid=grid, values=values, symmetric=True, name="M")


def _psd_row(n: int) -> VectorBuilder:
    def build(grid, center, radius, rng, name):
        M = random_psd_tensor(grid, center, radius, rng)
        decomposition = weakform_service.psd_test_decomposition(M, PSD_EPSILON)
        row = int(rng.integers(n))
        return decomposition.b[row].with_values(decomposition.b[row].values, name=name)

    return build


def _kinds(n: int, width: float) -> List[Tuple[str, VectorBuilder]]:
    kinds = [(f"coord{i + 1}", _sampled(_coordinate(i, n))) for i in range(n)]
    kinds += [(f"rot{a + 1}{b + 1}", _sampled(_rotation(a, b, n))) for a in range(n) for b in range(a + 1, n)]
    kinds.append(("gradbump", _sampled(_bump_gradient(n, width))))
    kinds.append(("psd", _psd_row(n)))
    return kinds


class FamilyService:
    """Test pair generation and deficit sweeps"""

    def cutoff_margin(self, grid: ChartGrid) -> int:
        """Widest cutoff margin (in cells, at most collar + 2) the grid allows"""
        for margin in (grid.margin + 2, grid.margin + 1, grid.margin):
            if all(2 * margin < m - 1 for m in grid.nodes):
                return margin
        raise GridError("grid too small for compactly supported test fields", nodes=list(grid.nodes))

    def default_test_family(
        self,
        g: MetricField,
        seed: int = 0,
        members: int = 20,
    ) -> List[TestPair]:
        """
        Deterministic family of compactly supported test pairs: radial bumps
        phi at seeded centres paired round-robin with coordinate, rotational
        and bump-gradient fields and with rows b_k of the PSD decomposition of
        seeded random PSD tensors. Every X is cut off at the chart collar and
        equals its profile on the support of its phi.

        Args:
            g: Metric whose grid carries the family
            seed: Seed of the numpy generator
            members: Number of pairs

        Returns:
            List of TestPair with ids like "rot12@c3"
        """
        grid = g.grid
        n = grid.dimension
        margin = self.cutoff_margin(grid)
        lo = np.array([a + margin * h for a, h in zip(grid.lower, grid.spacing)])
        hi = np.array([b - margin * h for b, h in zip(grid.upper, grid.spacing)])
        radius = 0.3 * float(np.min(hi - lo))
        if radius < 2.0 * max(grid.spacing):
            raise GridError("interior too small to resolve test bumps", radius=radius)
        rng = np.random.default_rng(seed)
        kinds = _kinds(n, radius)

        family = []
        for k in range(members):
            center = tuple(float(c) for c in rng.uniform(lo + radius, hi - radius))
            kind, build = kinds[k % len(kinds)]
            test_id = f"{kind}@c{k}"
            phi = field_service.sample_field(radial_bump_expr(center, radius), grid, name=f"phi@c{k}")
            phi = field_service.restrict_compact(phi, margin)
            X = build(grid, center, radius, rng, test_id)
            X = field_service.restrict_compact(X, margin)
            family.append(TestPair(phi=phi, X=X, test_id=test_id))
        logger.debug("Test family built", members=members, seed=seed, margin=margin)
        return family

    def evaluate_pair(
        self,
        g: MetricField,
        w: Optional[WeightField],
        spec: LowerBoundSpec,
        t: TestPair,
        mode: str = FD,
        order: Optional[int] = None,
    ) -> Tuple[DeficitRecord, float]:
        """One sweep row with the normalised Bochner residual of the pair"""
        deficit, terms, defect = weakform_service.lower_bound_terms(g, w, spec, t, mode, order)
        rhs = weakform_service.bochner_rhs(g, w, t, mode, order)
        pairing = float(sum(terms.values()))
        residual = abs(pairing - rhs.value) / (1.0 + abs(rhs.value))
        verdict = Verdict.FAIL if deficit < -defect else Verdict.PASS
        record = DeficitRecord(
            test_id=t.test_id,
            terms=list(terms.values()) + list(rhs.terms),
            value=deficit,
            defect=defect,
            verdict=verdict,
        )
        return record, residual

    def deficit_sweep(
        self,
        g: MetricField,
        w: Optional[WeightField],
        spec: LowerBoundSpec,
        family: Sequence[TestPair],
        mode: str = FD,
        order: Optional[int] = None,
        model: str = "custom",
    ) -> DeficitSweepReport:
        """
        Evaluate the lower-bound deficit of every pair. Records are sorted by
        test id; the verdict is FAIL when any deficit lies below minus its
        defect, and the witness is the most negative failing pair.

        Raises:
            DimensionBoundError: N < n, or N = n with nonconstant V
        """
        spec.validate(g.grid.dimension)
        if not family:
            raise ValueError("test family is empty")

        def job(t: TestPair):
            return self.evaluate_pair(g, w, spec, t, mode, order)

        with ThreadPoolExecutor(max_workers=settings.threads) as pool:
            results = list(pool.map(job, family))
        results.sort(key=lambda item: item[0].test_id)
        records = [r for r, _ in results]
        residuals = [res for _, res in results]

        lowest = min(records, key=lambda r: r.value)
        failing = [r for r in records if r.verdict == Verdict.FAIL]
        witness = min(failing, key=lambda r: r.value).test_id if failing else None
        report = DeficitSweepReport(
            model=model,
            K=spec.K,
            N=spec.N,
            records=records,
            verdict=Verdict.FAIL if failing else Verdict.PASS,
            witness=witness,
            min_deficit=lowest.value,
            min_defect=lowest.defect,
            max_residual=max(residuals),
        )
        logger.info(
            "Deficit sweep finished",
            model=model,
            K=spec.K,
            N=spec.N,
            members=len(records),
            verdict=report.verdict.value,
            witness=witness,
        )
        return report


family_service = FamilyService()
