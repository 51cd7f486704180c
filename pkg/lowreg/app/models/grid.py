"""
Uniform chart grid
"""
from dataclasses import dataclass
from functools import cached_property
from typing import List, Optional, Sequence, Tuple

import numpy as np

from app.core.exceptions import GridError

Box = Tuple[Tuple[float, ...], Tuple[float, ...]]


@dataclass(frozen=True, eq=False)
class ChartGrid:
    """
    Tensor-product grid on a coordinate box.

    Nodes are uniformly spaced, h_i = (b_i - a_i)/(m_i - 1). The collar of
    ``margin`` cells next to every face is reserved; the interior is the set
    of nodes at least ``margin`` cells from each face.
    """

    lower: Tuple[float, ...]
    upper: Tuple[float, ...]
    nodes: Tuple[int, ...]
    margin: int = 2

    def __post_init__(self):
        object.__setattr__(self, "lower", tuple(float(a) for a in self.lower))
        object.__setattr__(self, "upper", tuple(float(b) for b in self.upper))
        object.__setattr__(self, "nodes", tuple(int(m) for m in self.nodes))
        n = len(self.lower)
        if not 1 <= n <= 4:
            raise GridError("dimension must be between 1 and 4", dimension=n)
        if len(self.upper) != n or len(self.nodes) != n:
            raise GridError("bounds and node counts disagree in length")
        if any(m < 5 for m in self.nodes):
            raise GridError("at least 5 nodes per axis are required", nodes=list(self.nodes))
        if any(b <= a for a, b in zip(self.lower, self.upper)):
            raise GridError("upper bounds must exceed lower bounds")
        if self.margin < 2:
            raise GridError("margin must be at least 2 cells", margin=self.margin)
        if any(2 * self.margin > m - 1 for m in self.nodes):
            raise GridError("margin leaves no interior", margin=self.margin)

    @property
    def dimension(self) -> int:
        return len(self.lower)

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.nodes

    @cached_property
    def spacing(self) -> Tuple[float, ...]:
        return tuple((b - a) / (m - 1) for a, b, m in zip(self.lower, self.upper, self.nodes))

    @property
    def min_spacing(self) -> float:
        return min(self.spacing)

    @cached_property
    def axes(self) -> List[np.ndarray]:
        return [np.linspace(a, b, m) for a, b, m in zip(self.lower, self.upper, self.nodes)]

    @cached_property
    def coordinates(self) -> Tuple[np.ndarray, ...]:
        """Node coordinates, one array of grid shape per axis"""
        return tuple(np.meshgrid(*self.axes, indexing="ij"))

    @cached_property
    def trapezoid_weights(self) -> np.ndarray:
        weights = np.ones(self.shape)
        for axis, h in enumerate(self.spacing):
            w = np.full(self.nodes[axis], h)
            w[0] = w[-1] = h / 2.0
            shape = [1] * self.dimension
            shape[axis] = self.nodes[axis]
            weights = weights * w.reshape(shape)
        return weights

    def block_weights(self, slices: Sequence[slice]) -> np.ndarray:
        """Trapezoid weights of a block of nodes treated as its own box"""
        weights = np.ones(tuple(len(range(*s.indices(m))) for s, m in zip(slices, self.nodes)))
        for axis, h in enumerate(self.spacing):
            count = weights.shape[axis]
            w = np.full(count, h)
            if count > 1:
                w[0] = w[-1] = h / 2.0
            shape = [1] * self.dimension
            shape[axis] = count
            weights = weights * w.reshape(shape)
        return weights

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))

    def interior_slices(self, margin: Optional[int] = None) -> Tuple[slice, ...]:
        m_b = self.margin if margin is None else margin
        return tuple(slice(m_b, m - m_b) for m in self.nodes)

    def interior_mask(self, margin: Optional[int] = None) -> np.ndarray:
        mask = np.zeros(self.shape, dtype=bool)
        mask[self.interior_slices(margin)] = True
        return mask

    def collar_mask(self) -> np.ndarray:
        return ~self.interior_mask()

    def box_slices(self, box: Box) -> Tuple[slice, ...]:
        """Index ranges of the nodes lying in a closed sub-box"""
        lo, hi = box
        slices = []
        for axis, (a, b) in enumerate(zip(lo, hi)):
            h = self.spacing[axis]
            start = int(np.ceil((a - self.lower[axis]) / h - 1e-9))
            stop = int(np.floor((b - self.lower[axis]) / h + 1e-9)) + 1
            start = max(start, 0)
            stop = min(stop, self.nodes[axis])
            if stop <= start:
                raise GridError("sub-box contains no grid nodes", box=[list(lo), list(hi)])
            slices.append(slice(start, stop))
        return tuple(slices)

    def box_mask(self, box: Box) -> np.ndarray:
        mask = np.zeros(self.shape, dtype=bool)
        mask[self.box_slices(box)] = True
        return mask

    def subgrid(self, slices: Sequence[slice]) -> "ChartGrid":
        """Grid formed by a block of nodes (collar width 2)"""
        lower = tuple(ax[s][0] for ax, s in zip(self.axes, slices))
        upper = tuple(ax[s][-1] for ax, s in zip(self.axes, slices))
        nodes = tuple(len(ax[s]) for ax, s in zip(self.axes, slices))
        return ChartGrid(lower, upper, nodes, margin=2)

    def coarsen(self) -> "ChartGrid":
        """Every-other-node grid; requires an even number of cells per axis"""
        if any((m - 1) % 2 for m in self.nodes):
            raise GridError("coarsening needs an even number of cells per axis", nodes=list(self.nodes))
        nodes = tuple((m - 1) // 2 + 1 for m in self.nodes)
        return ChartGrid(self.lower, self.upper, nodes, margin=max(2, (self.margin + 1) // 2))

    @property
    def box(self) -> Box:
        return self.lower, self.upper

    def interior_box(self) -> Box:
        lo = tuple(a + self.margin * h for a, h in zip(self.lower, self.spacing))
        hi = tuple(b - self.margin * h for b, h in zip(self.upper, self.spacing))
        return lo, hi

    def distance_to_boundary(self, box: Box) -> float:
        """Sup-norm distance from a sub-box to the chart faces"""
        lo, hi = box
        return float(min(min(a - A, B - b) for a, b, A, B in zip(lo, hi, self.lower, self.upper)))

    def same_as(self, other: "ChartGrid") -> bool:
        return (
            self.lower == other.lower
            and self.upper == other.upper
            and self.nodes == other.nodes
        )

    def describe(self) -> dict:
        return {
            "dimension": self.dimension,
            "lower": list(self.lower),
            "upper": list(self.upper),
            "nodes": list(self.nodes),
            "margin": self.margin,
        }
