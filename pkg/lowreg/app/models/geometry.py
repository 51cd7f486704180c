"""
Connection and curvature carriers
"""
from dataclasses import dataclass
from typing import Any, Optional

import numpy as np

from app.models.field import MetricField, Tensor2Field
from app.models.grid import ChartGrid


@dataclass(frozen=True, eq=False)
class ChristoffelField:
    """
    Christoffel symbols of a metric on its grid.

    ``second[k, i, j]`` is the second-kind symbol with upper index k;
    ``first[i, j, l]`` is the first-kind symbol g_lk second[k, i, j].
    ``providers`` holds the symbolic second-kind symbols in analytic mode.
    """

    metric: MetricField
    second: np.ndarray
    first: np.ndarray
    mode: str = "fd"
    order: int = 2
    providers: Optional[Any] = None

    @property
    def grid(self) -> ChartGrid:
        return self.metric.grid

    @property
    def dimension(self) -> int:
        return self.metric.grid.dimension

    def contracted(self) -> np.ndarray:
        """Gamma^p_{pk}, shape (n, *grid)"""
        return np.einsum("ppk...->k...", self.second)

    def symmetry_gap(self) -> float:
        return float(np.max(np.abs(self.second - np.swapaxes(self.second, 1, 2))))


@dataclass(frozen=True, eq=False)
class CurvatureField:
    """
    Riemann tensor ``riemann[l, i, j, k]`` (upper index first) and the
    Ricci tensor obtained by contracting the first and second slots.

    ``ricci_skew`` is the sup of the antisymmetric part of the raw trace,
    zero in exact arithmetic and O(h^2) in finite-difference mode.
    """

    christoffel: ChristoffelField
    riemann: np.ndarray
    ricci: Tensor2Field
    ricci_skew: float = 0.0

    @property
    def grid(self) -> ChartGrid:
        return self.christoffel.grid

    @property
    def mode(self) -> str:
        return self.christoffel.mode

    def antisymmetry_gap(self) -> float:
        """sup |R^l_ijk + R^l_jik|"""
        return float(np.max(np.abs(self.riemann + np.swapaxes(self.riemann, 1, 2))))
