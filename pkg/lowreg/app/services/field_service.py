"""
Field sampling, finite differences, quadrature and norms
"""
from pathlib import Path
from typing import Any, Optional, Sequence, Union

import numpy as np
import structlog

from app.config import settings
from app.core.exceptions import GridError, MissingProviderError
from app.core.exprparse import Expr, diff_expr, eval_expr, mul, const, neg, div, func
from app.core.profiles import box_cutoff_expr
from app.core.symbolic import map_nested, rank_of, stack_nested
from app.models.field import (
    Field,
    MetricField,
    ScalarField,
    Tensor2Field,
    VectorField,
    WeightField,
)
from app.models.grid import Box, ChartGrid
from app.utils.csv_writer import write_csv

logger = structlog.get_logger()

_BY_RANK = {0: ScalarField, 1: VectorField, 2: Tensor2Field}


def fd_axis(values: np.ndarray, axis: int, h: float, order: int = 2) -> np.ndarray:
    """
    Finite-difference derivative along one array axis.

    Central differences inside, one-sided second-order at the two faces;
    ``order=4`` uses the five-point stencil where it fits and falls back to
    the second-order result in the two outer layers.
    """
    result = np.gradient(values, h, axis=axis, edge_order=2)
    if order == 4 and values.shape[axis] >= 5:
        moved = np.moveaxis(values, axis, 0)
        out = np.moveaxis(result, axis, 0)
        out[2:-2] = (moved[:-4] - 8.0 * moved[1:-3] + 8.0 * moved[3:-1] - moved[4:]) / (12.0 * h)
    elif order not in (2, 4):
        raise ValueError(f"unsupported finite-difference order {order}")
    return result


def fd_array(values: np.ndarray, grid: ChartGrid, rank: int, order: int = 2) -> np.ndarray:
    """First partials of a raw component array with ``rank`` leading axes, stacked first"""
    return np.stack(
        [fd_axis(values, rank + m, grid.spacing[m], order) for m in range(grid.dimension)]
    )


class FieldService:
    """Discrete substrate: sampling, derivatives, quadrature and norms"""

    def sample_field(
        self,
        provider: Any,
        grid: ChartGrid,
        name: str = "field",
        compact: bool = False,
    ) -> Field:
        """
        Evaluate a provider (Expr, or nested tuples of Expr) at every node.

        Raises:
            EvaluationDomainError: Domain failure at a node, reported with its
                coordinates
        """
        rank = rank_of(provider)
        coords = grid.coordinates
        values = stack_nested(map_nested(provider, lambda e: eval_expr(e, coords)))
        if compact:
            values = values.copy()
            values[..., grid.collar_mask()] = 0.0
        return _BY_RANK[rank](grid=grid, values=values, providers=provider, compact=compact, name=name)

    def sample_metric(self, providers: Sequence[Sequence[Expr]], grid: ChartGrid) -> MetricField:
        """Sample a metric from an n x n table of component expressions"""
        table = tuple(tuple(row) for row in providers)
        coords = grid.coordinates
        values = stack_nested(map_nested(table, lambda e: eval_expr(e, coords)))
        logger.debug("Metric sampled", grid=grid.describe())
        return MetricField(grid=grid, values=values, providers=table, name="g")

    def fd_partial(
        self,
        f: Field,
        axis: int,
        mode: str = "fd",
        order: Optional[int] = None,
    ) -> Field:
        """
        Partial derivative along coordinate ``axis`` (0-based).

        Args:
            f: Field of any rank
            axis: Coordinate index, 0 for x1
            mode: "fd" for finite differences, "analytic" for exact derivatives
                of the providers (or of the stored exact partials)
            order: Finite-difference accuracy, 2 or 4

        Returns:
            Field of the same rank; analytic results keep derivative providers

        Raises:
            MissingProviderError: Analytic mode on a field without providers or
                exact partials
        """
        cls = type(f) if type(f) in (ScalarField, VectorField) else _BY_RANK[f.rank]
        name = f"d{axis + 1}({f.name})"
        if mode == "analytic":
            if f.providers is not None:
                providers = map_nested(f.providers, lambda e: diff_expr(e, axis + 1))
                coords = f.grid.coordinates
                values = stack_nested(map_nested(providers, lambda e: eval_expr(e, coords)))
                return cls(grid=f.grid, values=values, providers=providers, name=name)
            if f.partials is not None:
                return cls(grid=f.grid, values=f.partials[axis].copy(), name=name)
            raise MissingProviderError(f.name)
        order = order or settings.fd_order
        values = fd_axis(f.values, f.rank + axis, f.grid.spacing[axis], order)
        return cls(grid=f.grid, values=values, name=name)

    def gradient_array(self, f: Field, mode: str = "fd", order: Optional[int] = None) -> np.ndarray:
        """All first partials stacked on a leading axis: shape (n,) + f.values.shape"""
        return np.stack([self.fd_partial(f, i, mode, order).values for i in range(f.grid.dimension)])

    def hessian_array(self, f: ScalarField, mode: str = "fd", order: Optional[int] = None) -> np.ndarray:
        """Second partials of a scalar field, shape (n, n) + grid.shape, symmetrised"""
        n = f.grid.dimension
        firsts = [self.fd_partial(f, i, mode, order) for i in range(n)]
        second = np.empty((n, n) + f.grid.shape)
        for i in range(n):
            for j in range(n):
                second[i, j] = self.fd_partial(firsts[i], j, mode, order).values
        return 0.5 * (second + np.swapaxes(second, 0, 1))

    def integrate_chart(
        self,
        f: Union[Field, np.ndarray],
        density: Optional[Union[Field, np.ndarray]] = None,
        grid: Optional[ChartGrid] = None,
    ) -> float:
        """
        Composite trapezoid quadrature of f * density over the grid.

        Summation is numpy's pairwise reduction, so results are bit-stable.
        """
        values = f.values if isinstance(f, Field) else np.asarray(f, dtype=float)
        grid = f.grid if isinstance(f, Field) else grid
        if grid is None:
            raise GridError("integrate_chart needs a grid for raw arrays")
        integrand = values * grid.trapezoid_weights
        if density is not None:
            integrand = integrand * (density.values if isinstance(density, Field) else density)
        return float(np.sum(integrand))

    def lp_norm(
        self,
        f: Union[Field, np.ndarray],
        p: float,
        region: Optional[Box] = None,
        grid: Optional[ChartGrid] = None,
        density: Optional[np.ndarray] = None,
    ) -> float:
        """
        L^p norm over a sub-box (the whole chart by default).

        Tensor fields use the Frobenius norm per node; p may be ``inf``.
        Raw arrays are treated as scalar fields on ``grid``.
        """
        if isinstance(f, Field):
            grid = f.grid
            magnitude = f.node_norm()
        else:
            magnitude = np.abs(np.asarray(f, dtype=float))
        if grid is None:
            raise GridError("lp_norm needs a grid for raw arrays")
        slices = grid.box_slices(region) if region is not None else tuple(slice(0, m) for m in grid.nodes)
        block = magnitude[slices]
        if np.isinf(p):
            return float(np.max(block)) if block.size else 0.0
        if p < 1:
            raise ValueError("p must be at least 1")
        weights = grid.block_weights(slices)
        if density is not None:
            weights = weights * density[slices]
        return float(np.sum(block ** p * weights) ** (1.0 / p))

    def restrict_compact(self, f: Field, margin: int) -> Field:
        """
        Multiply by a smooth cutoff that is 0 on the collar and 1 from
        ``margin`` cells inward; the result carries the compact-support flag.

        Raises:
            GridError: margin below the grid collar or beyond half the grid
        """
        grid = f.grid
        if margin < grid.margin:
            raise GridError("cutoff margin is below the grid collar", margin=margin, collar=grid.margin)
        if any(2 * margin >= m - 1 for m in grid.nodes):
            raise GridError("cutoff margin exceeds half the grid", margin=margin)
        cutoff = self.cutoff_expr(grid, margin)
        coords = grid.coordinates
        c = eval_expr(cutoff, coords)
        c[grid.collar_mask()] = 0.0
        values = f.values * c
        providers = None
        partials = None
        if f.providers is not None:
            providers = map_nested(f.providers, lambda e: mul(e, cutoff))
        elif f.partials is not None:
            dc = np.stack([eval_expr(diff_expr(cutoff, i + 1), coords) for i in range(grid.dimension)])
            expand = (slice(None),) + (None,) * f.rank
            partials = f.partials * c + f.values[None, ...] * dc[expand]
        lo = tuple(a + (grid.margin - 1) * h for a, h in zip(grid.lower, grid.spacing))
        hi = tuple(b - (grid.margin - 1) * h for b, h in zip(grid.upper, grid.spacing))
        support = (lo, hi)
        if f.support is not None:
            support = (
                tuple(max(a, b) for a, b in zip(lo, f.support[0])),
                tuple(min(a, b) for a, b in zip(hi, f.support[1])),
            )
        return type(f)(
            grid=grid,
            values=values,
            providers=providers,
            partials=partials,
            compact=True,
            support=support,
            name=f.name,
        )

    def cutoff_expr(self, grid: ChartGrid, margin: int) -> Expr:
        """Cutoff used by restrict_compact, as an expression"""
        lo = [a + (grid.margin - 1) * h for a, h in zip(grid.lower, grid.spacing)]
        hi = [b - (grid.margin - 1) * h for b, h in zip(grid.upper, grid.spacing)]
        widths = [(margin - grid.margin + 1) * h for h in grid.spacing]
        return box_cutoff_expr(lo, hi, widths)

    def make_weight(
        self,
        g: MetricField,
        h: Optional[Expr] = None,
        V: Optional[Expr] = None,
        mode: str = "analytic",
        order: Optional[int] = None,
    ) -> WeightField:
        """
        Build the weight of h^2 dvol_g from h or from V = -2 log h (h = 1 by
        default).
        """
        grid = g.grid
        if h is None and V is not None:
            h = func("exp", neg(div(V, const(2.0))))
        if h is None:
            h = const(1.0)
        h_field = self.sample_field(h, grid, name="h")
        grad_h = self.gradient_array(h_field, mode, order)
        hess_h = self.hessian_array(h_field, mode, order)
        return WeightField(h=h_field, metric=g, grad_h=grad_h, hess_h=hess_h, mode=mode)

    def coarsen_field(self, f: Field, coarse: ChartGrid) -> Field:
        """
        Restrict a field to the every-other-node grid. Values are
        subsampled (coarse nodes are fine nodes) and providers are kept.
        """
        step = (slice(None),) * f.rank + tuple(slice(None, None, 2) for _ in range(coarse.dimension))
        partials = f.partials[(slice(None),) + step] if f.partials is not None else None
        kwargs = {}
        if isinstance(f, Tensor2Field) and not isinstance(f, MetricField):
            kwargs["symmetric"] = f.symmetric
        cls = type(f)
        return cls(
            grid=coarse,
            values=f.values[step],
            providers=f.providers,
            partials=partials,
            compact=False,
            name=f.name,
            **kwargs,
        )

    def coarsen_weight(self, w: WeightField, g: MetricField) -> WeightField:
        """Weight on the coarse grid of ``g``, re-deriving h derivatives in its own mode"""
        h = self.coarsen_field(w.h, g.grid)
        if h.providers is not None:
            return self.make_weight(g, h=h.providers, mode=w.mode)
        grad_h = fd_array(h.values, g.grid, 0, settings.fd_order)
        hess_h = fd_array(grad_h, g.grid, 1, settings.fd_order)
        hess_h = 0.5 * (hess_h + np.swapaxes(hess_h, 0, 1))
        return WeightField(h=h, metric=g, grad_h=grad_h, hess_h=hess_h, mode="fd")

    def dump_field_csv(self, f: Field, path: Union[str, Path]) -> Path:
        """
        Write ``x1,...,xn,component,value`` rows; components are 1-based
        indices joined by '.', scalars use component 0.
        """
        return self.dump_array_csv(f.values, f.rank, f.grid, path)

    def dump_array_csv(self, values: np.ndarray, rank: int, grid: ChartGrid, path: Union[str, Path]) -> Path:
        """Same format for a raw component array of any rank"""
        n = grid.dimension
        header = [f"x{i + 1}" for i in range(n)] + ["component", "value"]
        coords = [c.ravel() for c in grid.coordinates]
        components = list(np.ndindex((n,) * rank)) if rank else [()]

        def rows():
            for comp in components:
                label = ".".join(str(k + 1) for k in comp) if comp else "0"
                flat = values[comp].ravel()
                for node in range(flat.size):
                    yield [coords[a][node] for a in range(n)] + [label, flat[node]]

        return write_csv(path, header, rows())


field_service = FieldService()
