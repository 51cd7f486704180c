"""
Catalog of named metric/weight models
"""
import math
from typing import Dict, List, Optional, Sequence, Tuple

import structlog

from app.core.exceptions import UnknownCatalogModelError
from app.core.exprparse import parse_expr
from app.models.field import MetricField, WeightField
from app.models.grid import ChartGrid
from app.schemas.catalog import CatalogModel, Regularity
from app.services.field_service import field_service

logger = structlog.get_logger()


def _diagonal(entries: Sequence[str]) -> List[List[str]]:
    n = len(entries)
    return [[entries[i] if i == j else "0" for j in range(n)] for i in range(n)]


def _flat(n: int) -> CatalogModel:
    return CatalogModel(
        name="flat",
        description="Euclidean metric",
        dimension=n,
        metric=_diagonal(["1"] * n),
        lower=[-1.0] * n,
        upper=[1.0] * n,
        ricci_factor=0.0,
        bakry_emery_K=0.0,
        bakry_emery_N=float(n),
    )


def _gaussian(n: int) -> CatalogModel:
    return CatalogModel(
        name="gaussian_weight",
        description="Euclidean metric with V = |x|^2 / 2",
        dimension=n,
        metric=_diagonal(["1"] * n),
        V="(" + " + ".join(f"x{i + 1}^2" for i in range(n)) + ") / 2",
        lower=[-2.0] * n,
        upper=[2.0] * n,
        bakry_emery_K=1.0,
        bakry_emery_N=math.inf,
    )


_FIXED = [
    CatalogModel(
        name="sphere_polar",
        description="Round unit sphere in polar coordinates",
        dimension=2,
        metric=_diagonal(["1", "sin(x1)^2"]),
        lower=[0.3, 0.0],
        upper=[math.pi - 0.3, 2.0],
        ricci_factor=1.0,
        bakry_emery_K=1.0,
        bakry_emery_N=2.0,
    ),
    CatalogModel(
        name="hyperbolic_halfplane",
        description="Hyperbolic upper half-plane",
        dimension=2,
        metric=_diagonal(["x2^(-2)", "x2^(-2)"]),
        lower=[-1.0, 0.5],
        upper=[1.0, 2.5],
        ricci_factor=-1.0,
        bakry_emery_K=-1.0,
        bakry_emery_N=2.0,
    ),
    CatalogModel(
        name="polar_flat",
        description="Euclidean plane in polar coordinates",
        dimension=2,
        metric=_diagonal(["1", "x1^2"]),
        lower=[0.5, 0.0],
        upper=[2.0, 2.0],
        ricci_factor=0.0,
        bakry_emery_K=0.0,
        bakry_emery_N=2.0,
    ),
    CatalogModel(
        name="lip_cone",
        description="Conformally flat metric with a Lipschitz crease along x1 = 0",
        dimension=2,
        metric=_diagonal(["1 + abs(x1)", "1 + abs(x1)"]),
        lower=[-1.0, -1.0],
        upper=[1.0, 1.0],
        regularity=Regularity.LIPSCHITZ,
    ),
    CatalogModel(
        name="c11_bump",
        description="Warped metric with a C^{1,1} switch-on at x1 = 0",
        dimension=2,
        metric=_diagonal(["1", "1 + max(0, x1)^2"]),
        lower=[-1.0, -1.0],
        upper=[1.0, 1.0],
        regularity=Regularity.C11,
    ),
]


class CatalogService:
    """Lookup and sampling of catalog models"""

    def names(self) -> List[str]:
        return ["flat", "gaussian_weight"] + [m.name for m in _FIXED]

    def get(self, name: str, dimension: int = 2) -> CatalogModel:
        """
        Raises:
            UnknownCatalogModelError: name not in the catalog
        """
        if name == "flat":
            return _flat(dimension)
        if name == "gaussian_weight":
            return _gaussian(dimension)
        for model in _FIXED:
            if model.name == name:
                return model
        raise UnknownCatalogModelError(name, self.names())

    def models(self, dimension: int = 2) -> List[CatalogModel]:
        return [self.get(name, dimension) for name in self.names()]

    def default_grid(self, model: CatalogModel, nodes: int = 41, margin: int = 2) -> ChartGrid:
        return ChartGrid(tuple(model.lower), tuple(model.upper), (nodes,) * model.dimension, margin=margin)

    def build(
        self,
        model: CatalogModel,
        grid: ChartGrid,
        mode: str = "analytic",
        order: Optional[int] = None,
    ) -> Tuple[MetricField, Optional[WeightField]]:
        """
        Sample the metric of a model on a grid and build its weight (None
        for unweighted models).
        """
        n = model.dimension
        table = [[parse_expr(src, n) for src in row] for row in model.metric]
        g = field_service.sample_metric(table, grid)
        w = None
        if model.V is not None:
            w = field_service.make_weight(g, V=parse_expr(model.V, n), mode=mode, order=order)
        logger.debug("Catalog model sampled", model=model.name, grid=grid.describe(), weighted=w is not None)
        return g, w

    def facts(self) -> Dict[str, dict]:
        return {m.name: m.model_dump(mode="json") for m in self.models()}


catalog_service = CatalogService()
