"""
Shared problem setup for the commands
"""
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import structlog

from app.core.exceptions import ConfigValidationError
from app.core.exprparse import Expr, mul, parse_expr
from app.core.profiles import box_cutoff_expr, radial_bump_expr
from app.core.symbolic import map_nested
from app.models.field import MetricField, ScalarField, WeightField
from app.models.grid import Box, ChartGrid
from app.schemas.catalog import CatalogModel
from app.schemas.config import ExperimentConfig, check_sources
from app.schemas.reports import Verdict
from app.services.catalog_service import catalog_service
from app.services.field_service import field_service

logger = structlog.get_logger()

EXIT_STATUS = {Verdict.PASS: 0, Verdict.FAIL: 1}

_EPS = re.compile(r"\beps\b")


@dataclass(frozen=True, eq=False)
class Problem:
    """Sampled metric and weight of one experiment"""

    config: ExperimentConfig
    model: CatalogModel
    grid: ChartGrid
    g: MetricField
    w: Optional[WeightField]
    out_dir: Path

    @property
    def label(self) -> str:
        return self.model.name

    @property
    def dimension(self) -> int:
        return self.grid.dimension

    def parse(self, source: str) -> Expr:
        return parse_expr(source, self.dimension)

    def scalar(self, source: str, name: str, compact: bool = False) -> ScalarField:
        return field_service.sample_field(self.parse(source), self.grid, name=name, compact=compact)

    def output(self, filename: str) -> Path:
        return self.out_dir / filename


def resolve_model(config: ExperimentConfig) -> CatalogModel:
    """Catalog model of the config, or an ad-hoc model without curvature facts"""
    chart = config.chart
    if config.metric.catalog is not None:
        model = catalog_service.get(config.metric.catalog, chart.dimension if chart else 2)
        if chart is not None and chart.dimension != model.dimension:
            raise ConfigValidationError(
                [{"field": "chart.dimension", "message": f"{model.name} is a {model.dimension}-dimensional model"}]
            )
        return model
    return CatalogModel(
        name=config.name,
        description="explicit metric components",
        dimension=chart.dimension,
        metric=config.metric.components,
        lower=chart.lower,
        upper=chart.upper,
    )


def build_problem(
    config: ExperimentConfig,
    out_dir: Path,
    mode: str = "fd",
    order: Optional[int] = None,
) -> Problem:
    """
    Sample the config's metric and weight on its chart.

    The chart defaults to the catalog model's box with 41 nodes per axis.
    An explicit [weight] section replaces the model's own V.

    Raises:
        ConfigValidationError: sources that do not parse in the chart dimension
    """
    model = resolve_model(config)
    chart = config.chart
    if chart is not None:
        grid = ChartGrid(tuple(chart.lower), tuple(chart.upper), chart.node_tuple(), margin=chart.margin)
    else:
        grid = catalog_service.default_grid(model)
    errors = check_sources(config, grid.dimension)
    if errors:
        raise ConfigValidationError(errors)

    g, w = catalog_service.build(model, grid, mode=mode, order=order)
    weight = config.weight
    if weight is not None and (weight.h is not None or weight.V is not None):
        n = grid.dimension
        w = field_service.make_weight(
            g,
            h=parse_expr(weight.h, n) if weight.h is not None else None,
            V=parse_expr(weight.V, n) if weight.V is not None else None,
            mode=mode,
            order=order,
        )
    logger.info("Problem built", model=model.name, grid=grid.describe(), weighted=w is not None, mode=mode)
    return Problem(config=config, model=model, grid=grid, g=g, w=w, out_dir=Path(out_dir))


def substitute_eps(source: str, epsilon: float) -> str:
    """Replace the token ``eps`` of an a_eps source by a scale"""
    return _EPS.sub(f"({epsilon!r})", source)


def inset_box(grid: ChartGrid, fraction: float) -> Box:
    """Chart box shrunk by ``fraction`` of its width on every side"""
    lo = tuple(a + fraction * (b - a) for a, b in zip(grid.lower, grid.upper))
    hi = tuple(b - fraction * (b - a) for a, b in zip(grid.lower, grid.upper))
    return lo, hi


def as_box(value: Optional[Sequence[Sequence[float]]]) -> Optional[Box]:
    if value is None:
        return None
    return tuple(float(v) for v in value[0]), tuple(float(v) for v in value[1])


def centred_bump(grid: ChartGrid, fraction: float = 0.25) -> Expr:
    """Radial bump at the chart centre of radius ``fraction`` of the smallest width"""
    center = tuple(0.5 * (a + b) for a, b in zip(grid.lower, grid.upper))
    radius = fraction * min(b - a for a, b in zip(grid.lower, grid.upper))
    return radial_bump_expr(center, radius)


def cut_off(provider, box: Box) -> object:
    """Multiply a provider by a smooth cutoff vanishing outside ``box``"""
    widths = [0.25 * (b - a) for a, b in zip(*box)]
    cutoff = box_cutoff_expr(box[0], box[1], widths)
    return map_nested(provider, lambda e: mul(e, cutoff))


def verdict_line(command: str, problem: Problem, verdict: Verdict, **values) -> str:
    """One stdout line: command, model, verdict and the compared numbers"""
    parts = " ".join(f"{key}={value!r}" if isinstance(value, float) else f"{key}={value}" for key, value in values.items())
    return f"{command} {problem.label}: {verdict.value} {parts}".rstrip()


def combine(verdicts: Sequence[Verdict]) -> Verdict:
    return Verdict.FAIL if any(v == Verdict.FAIL for v in verdicts) else Verdict.PASS
