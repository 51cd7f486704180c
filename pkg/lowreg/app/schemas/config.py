"""
Experiment configuration schemas and the TOML loader
"""
import math
import re
import sys

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Union

from pydantic import BaseModel, Field, ValidationError, field_validator, model_validator

from app.core.exceptions import ConfigValidationError, LowRegError
from app.core.exprparse import parse_expr

Mode = Literal["analytic", "fd"]


def _check_box(value: Optional[List[List[float]]]) -> Optional[List[List[float]]]:
    if value is None:
        return value
    if len(value) != 2 or len(value[0]) != len(value[1]):
        raise ValueError("a box is written [[lower...], [upper...]]")
    if any(b <= a for a, b in zip(value[0], value[1])):
        raise ValueError("upper corner must exceed lower corner")
    return value


class ChartSection(BaseModel):
    """Coordinate box and resolution"""
    dimension: int = Field(..., ge=1, le=4, description="Chart dimension n")
    lower: List[float] = Field(..., description="Lower corner a_i")
    upper: List[float] = Field(..., description="Upper corner b_i")
    nodes: Union[int, List[int]] = Field(41, description="Nodes per axis (one value for all axes)")
    margin: int = Field(2, ge=2, description="Boundary collar in cells")

    @model_validator(mode="after")
    def check_lengths(self):
        n = self.dimension
        if len(self.lower) != n or len(self.upper) != n:
            raise ValueError("lower and upper must have one entry per dimension")
        if isinstance(self.nodes, list) and len(self.nodes) != n:
            raise ValueError("nodes must have one entry per dimension")
        return self

    def node_tuple(self) -> tuple:
        if isinstance(self.nodes, int):
            return (self.nodes,) * self.dimension
        return tuple(self.nodes)


class MetricSection(BaseModel):
    """Either a catalog model or explicit components"""
    catalog: Optional[str] = Field(None, description="Catalog model name")
    components: Optional[List[List[str]]] = Field(None, description="n x n component sources")

    @model_validator(mode="after")
    def exactly_one(self):
        if (self.catalog is None) == (self.components is None):
            raise ValueError("give exactly one of catalog and components")
        if self.components is not None:
            n = len(self.components)
            if any(len(row) != n for row in self.components):
                raise ValueError("components must form a square table")
        return self


class WeightSection(BaseModel):
    """Weight of h^2 dvol_g, given as h or as V = -2 log h"""
    h: Optional[str] = None
    V: Optional[str] = None

    @model_validator(mode="after")
    def at_most_one(self):
        if self.h is not None and self.V is not None:
            raise ValueError("give at most one of h and V")
        return self


class CurvatureSection(BaseModel):
    mode: Mode = "fd"
    fd_order: Literal[2, 4] = 2
    N: float = Field(math.inf, description="Dimension bound of Ric_mu,N")


class WeakSection(BaseModel):
    mode: Mode = "fd"
    K: float = 0.0
    N: float = math.inf
    family: Literal["default"] = "default"
    seed: int = Field(0, ge=0, lt=2 ** 64, description="64-bit seed of the test family")
    members: int = Field(20, ge=1)


class MollifySection(BaseModel):
    p: float = Field(4.0, ge=2.0)
    epsilons: List[float] = Field(default_factory=lambda: [0.2, 0.1, 0.05, 0.025])
    region: Optional[List[List[float]]] = Field(None, description="[lower, upper] of the compact set")
    a: Optional[str] = Field(None, description="Multiplier a of the commutator experiment")
    f: Optional[str] = Field(None, description="Function f of the Friedrichs experiments")
    a_eps: Optional[str] = Field(None, description="Smooth family a_eps; the token 'eps' is replaced by each scale")

    @field_validator("epsilons")
    @classmethod
    def positive(cls, value: List[float]) -> List[float]:
        if not value or any(e <= 0 for e in value):
            raise ValueError("epsilons must be a nonempty list of positive scales")
        return value

    @field_validator("region")
    @classmethod
    def region_box(cls, value):
        return _check_box(value)


class GradApproxSection(BaseModel):
    epsilons: List[float] = Field(default_factory=lambda: [0.2, 0.1, 0.05])
    delta_constant: Optional[float] = Field(
        None, gt=0.0, description="C in delta = eps / (C (1 + |DX| + |D^2X|)); fitted to the chart by default"
    )
    ratio_band: List[float] = Field(
        default_factory=lambda: [1.6, 4.4], description="Accepted W^{1,1} error ratio per halving of epsilon"
    )
    grad_drift: float = Field(0.3, gt=0.0, description="Allowed relative drift of sup|grad h_p| * eps over the sweep")
    field: Optional[List[str]] = Field(None, description="Vector field components")
    support: Optional[List[List[float]]] = Field(None, description="[lower, upper] box the field is cut off to")
    phi: Optional[str] = Field(None, description="Nonnegative function for the radial bump approximation")
    radius: float = Field(0.25, gt=0.0, description="Admissible radius")
    tolerance: float = Field(0.05, gt=0.0, description="Sup-norm target of the radial bump approximation")

    @field_validator("epsilons")
    @classmethod
    def positive(cls, value: List[float]) -> List[float]:
        if not value or any(e <= 0 for e in value):
            raise ValueError("epsilons must be a nonempty list of positive scales")
        return value

    @field_validator("ratio_band")
    @classmethod
    def band(cls, value: List[float]) -> List[float]:
        if len(value) != 2 or not 0 < value[0] < value[1]:
            raise ValueError("ratio_band is written [lower, upper] with 0 < lower < upper")
        return value

    @field_validator("support")
    @classmethod
    def support_box(cls, value):
        return _check_box(value)


class HeatSection(BaseModel):
    K: float = 0.0
    times: List[float] = Field(default_factory=lambda: [0.005, 0.01])
    steps: int = Field(20, ge=1, description="Implicit-Euler steps per flow time")
    steps_max_principle: int = Field(200, ge=0)
    f: Optional[str] = Field(None, description="Initial datum; a centred bump by default")


class VolumeSection(BaseModel):
    vhat: str = Field(..., description="Nonnegative function Vhat")


class ExperimentConfig(BaseModel):
    """One experiment file"""
    name: str = "experiment"
    chart: Optional[ChartSection] = None
    metric: MetricSection
    weight: Optional[WeightSection] = None
    curvature: CurvatureSection = Field(default_factory=CurvatureSection)
    weak: WeakSection = Field(default_factory=WeakSection)
    mollify: MollifySection = Field(default_factory=MollifySection)
    gradapprox: GradApproxSection = Field(default_factory=GradApproxSection)
    heat: HeatSection = Field(default_factory=HeatSection)
    volume: Optional[VolumeSection] = None

    @model_validator(mode="after")
    def chart_required_for_components(self):
        if self.metric.components is not None and self.chart is None:
            raise ValueError("explicit metric components need a [chart] section")
        if self.chart is not None and self.metric.components is not None:
            if len(self.metric.components) != self.chart.dimension:
                raise ValueError("metric components do not match the chart dimension")
        return self

    def sources(self) -> Dict[str, str]:
        """Every expression source keyed by its dotted path"""
        found: Dict[str, str] = {}
        if self.metric.components is not None:
            for i, row in enumerate(self.metric.components):
                for j, src in enumerate(row):
                    found[f"metric.components.{i}.{j}"] = src
        if self.weight is not None:
            for key in ("h", "V"):
                if getattr(self.weight, key) is not None:
                    found[f"weight.{key}"] = getattr(self.weight, key)
        for key in ("a", "f"):
            if getattr(self.mollify, key) is not None:
                found[f"mollify.{key}"] = getattr(self.mollify, key)
        if self.mollify.a_eps is not None:
            found["mollify.a_eps"] = re.sub(r"\beps\b", "(1)", self.mollify.a_eps)
        if self.gradapprox.field is not None:
            for i, src in enumerate(self.gradapprox.field):
                found[f"gradapprox.field.{i}"] = src
        if self.gradapprox.phi is not None:
            found["gradapprox.phi"] = self.gradapprox.phi
        if self.heat.f is not None:
            found["heat.f"] = self.heat.f
        if self.volume is not None:
            found["volume.vhat"] = self.volume.vhat
        return found


def check_sources(config: ExperimentConfig, dimension: int) -> List[Dict[str, Any]]:
    """Parse every source in the config's dimension; returns field-path errors"""
    errors = []
    for path, source in config.sources().items():
        try:
            parse_expr(source, dimension)
        except LowRegError as exc:
            errors.append({"field": path, "message": exc.message})
    if config.gradapprox.field is not None and len(config.gradapprox.field) != dimension:
        errors.append({"field": "gradapprox.field", "message": "one component per dimension is required"})
    for path, box in (("mollify.region", config.mollify.region), ("gradapprox.support", config.gradapprox.support)):
        if box is not None and len(box[0]) != dimension:
            errors.append({"field": path, "message": "box corners need one entry per dimension"})
    return errors


def load_config(path: Union[str, Path], dimension: Optional[int] = None) -> ExperimentConfig:
    """
    Read and validate an experiment TOML file.

    Args:
        path: Config file
        dimension: Dimension used to check expression sources when the file
            has no [chart] section (taken from the catalog model)

    Raises:
        ConfigValidationError: Unreadable file, schema violations or bad
            expression sources, each reported with its dotted field path
    """
    path = Path(path)
    try:
        with path.open("rb") as handle:
            data = tomllib.load(handle)
    except (OSError, tomllib.TOMLDecodeError) as exc:
        raise ConfigValidationError([{"field": "<file>", "message": str(exc)}], path=str(path))
    return parse_config(data, dimension, str(path))


def parse_config(data: Dict[str, Any], dimension: Optional[int] = None, path: Optional[str] = None) -> ExperimentConfig:
    """Validate an already-parsed mapping"""
    try:
        config = ExperimentConfig.model_validate(data)
    except ValidationError as exc:
        errors = [
            {"field": ".".join(str(part) for part in err["loc"]) or "<root>", "message": err["msg"]}
            for err in exc.errors()
        ]
        raise ConfigValidationError(errors, path=path)
    n = config.chart.dimension if config.chart is not None else dimension
    if n is not None:
        errors = check_sources(config, n)
        if errors:
            raise ConfigValidationError(errors, path=path)
    return config
