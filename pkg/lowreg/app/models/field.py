"""
Grid field carriers: scalar, vector and 2-tensor fields, metrics and weights
"""
from dataclasses import dataclass, field, replace
from typing import Any, ClassVar, Optional, Tuple

import numpy as np

from app.core.exceptions import (
    FieldShapeError,
    NonPositiveWeightError,
    NotPositiveDefiniteError,
    SupportViolationError,
)
from app.models.grid import Box, ChartGrid


def node_coordinates(grid: ChartGrid, index: Tuple[int, ...]) -> Tuple[float, ...]:
    return tuple(float(ax[i]) for ax, i in zip(grid.axes, index))


@dataclass(frozen=True, eq=False)
class Field:
    """
    Per-node values of a tensor field on a chart grid.

    ``values`` has shape ``(n,)*rank + grid.shape``. ``providers`` holds the
    analytic Expr of each component (nested tuples for rank > 0);
    ``partials`` optionally holds exact first partials with a leading axis
    for the differentiation direction.
    """

    rank: ClassVar[int] = 0

    grid: ChartGrid
    values: np.ndarray
    providers: Optional[Any] = None
    partials: Optional[np.ndarray] = None
    compact: bool = False
    support: Optional[Box] = None
    name: str = "field"

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "values", values)
        expected = self.component_shape + self.grid.shape
        if values.shape != expected:
            raise FieldShapeError(
                f"{self.name} has shape {values.shape}, expected {expected}",
                field=self.name,
            )
        if self.partials is not None and self.partials.shape != (self.grid.dimension,) + expected:
            raise FieldShapeError(f"partials of {self.name} have the wrong shape", field=self.name)
        if self.compact:
            collar = self.grid.collar_mask()
            if np.any(values[..., collar] != 0.0):
                raise SupportViolationError(self.name, "nonzero values on the boundary collar")

    @property
    def component_shape(self) -> Tuple[int, ...]:
        return (self.grid.dimension,) * self.rank

    @property
    def has_providers(self) -> bool:
        return self.providers is not None

    def provider(self, component: Tuple[int, ...] = ()) -> Any:
        if self.providers is None:
            return None
        node = self.providers
        for k in component:
            node = node[k]
        return node

    def node_norm(self) -> np.ndarray:
        """Frobenius norm per node"""
        if self.rank == 0:
            return np.abs(self.values)
        axes = tuple(range(self.rank))
        return np.sqrt(np.sum(self.values ** 2, axis=axes))

    def sup_norm(self) -> float:
        return float(np.max(self.node_norm()))

    def with_values(self, values: np.ndarray, **changes: Any) -> "Field":
        changes.setdefault("providers", None)
        changes.setdefault("partials", None)
        return replace(self, values=values, **changes)

    def support_box(self, atol: float = 0.0) -> Optional[Box]:
        """Bounding box of the nodes where the field is nonzero"""
        if self.support is not None:
            return self.support
        nonzero = self.node_norm() > atol
        if not np.any(nonzero):
            return None
        idx = np.argwhere(nonzero)
        lo = tuple(float(self.grid.axes[a][idx[:, a].min()]) for a in range(self.grid.dimension))
        hi = tuple(float(self.grid.axes[a][idx[:, a].max()]) for a in range(self.grid.dimension))
        return lo, hi


@dataclass(frozen=True, eq=False)
class ScalarField(Field):
    rank: ClassVar[int] = 0


@dataclass(frozen=True, eq=False)
class VectorField(Field):
    rank: ClassVar[int] = 1


@dataclass(frozen=True, eq=False)
class Tensor2Field(Field):
    rank: ClassVar[int] = 2

    symmetric: bool = False

    def __post_init__(self):
        super().__post_init__()
        if self.symmetric:
            gap = np.max(np.abs(self.values - np.swapaxes(self.values, 0, 1)))
            scale = max(1.0, float(np.max(np.abs(self.values))))
            if gap > 1e-12 * scale:
                raise FieldShapeError(f"{self.name} is flagged symmetric but T_ij != T_ji", gap=float(gap))

    def as_matrices(self) -> np.ndarray:
        """Values with the component axes moved last: shape grid.shape + (n, n)"""
        return np.moveaxis(self.values, (0, 1), (-2, -1))


@dataclass(frozen=True, eq=False)
class MetricField(Tensor2Field):
    """
    Positive definite symmetric metric with cached inverse and determinant.
    """

    symmetric: bool = True
    inverse: np.ndarray = field(init=False, repr=False, default=None)
    det: np.ndarray = field(init=False, repr=False, default=None)

    def __post_init__(self):
        super().__post_init__()
        matrices = self.as_matrices()
        try:
            np.linalg.cholesky(matrices)
        except np.linalg.LinAlgError:
            eig_min = np.linalg.eigvalsh(matrices)[..., 0]
            index = np.unravel_index(int(np.argmin(eig_min)), self.grid.shape)
            raise NotPositiveDefiniteError(node_coordinates(self.grid, index))
        inverse = np.linalg.inv(matrices)
        object.__setattr__(self, "inverse", np.moveaxis(inverse, (-2, -1), (0, 1)))
        object.__setattr__(self, "det", np.linalg.det(matrices))

    @property
    def sqrt_det(self) -> np.ndarray:
        return np.sqrt(self.det)

    def inner(self, X: np.ndarray, Y: np.ndarray) -> np.ndarray:
        """g(X, Y) per node for component arrays of shape (n, ...)"""
        return np.einsum("ij...,i...,j...->...", self.values, X, Y)

    def inverse_inner(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        """g^{ij} a_i b_j per node for covector arrays"""
        return np.einsum("ij...,i...,j...->...", self.inverse, a, b)


@dataclass(frozen=True, eq=False)
class WeightField:
    """
    Weight h > 0 of the measure h^2 dvol_g, with V = -2 log h.

    ``grad_h`` and ``hess_h`` are coordinate derivatives of h (analytic or
    finite-difference, as recorded in ``mode``).
    """

    h: ScalarField
    metric: MetricField
    grad_h: np.ndarray
    hess_h: np.ndarray
    mode: str = "fd"

    def __post_init__(self):
        h = self.h.values
        if np.any(h <= 0) or not np.all(np.isfinite(h)):
            index = np.unravel_index(int(np.argmin(h)), h.shape)
            raise NonPositiveWeightError(float(np.min(h)), node_coordinates(self.h.grid, index))

    @property
    def grid(self) -> ChartGrid:
        return self.h.grid

    @property
    def V(self) -> np.ndarray:
        return -2.0 * np.log(self.h.values)

    @property
    def grad_V(self) -> np.ndarray:
        return -2.0 * self.grad_h / self.h.values

    @property
    def hess_V(self) -> np.ndarray:
        h = self.h.values
        outer = np.einsum("i...,j...->ij...", self.grad_h, self.grad_h)
        return -2.0 * self.hess_h / h + 2.0 * outer / h ** 2

    @property
    def density(self) -> np.ndarray:
        """Measure density h^2 sqrt|g| with respect to Lebesgue measure"""
        return self.h.values ** 2 * self.metric.sqrt_det

    @property
    def is_constant(self) -> bool:
        return bool(np.all(self.grad_h == 0.0))
