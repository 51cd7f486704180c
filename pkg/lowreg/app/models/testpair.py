"""
Test objects for distributional pairings
"""
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from app.core.exceptions import DimensionBoundError, SupportViolationError
from app.models.field import ScalarField, VectorField


@dataclass(frozen=True, eq=False)
class TestPair:
    """
    Compactly supported test vector field X (or scalar f, tested through
    X = grad f) with a nonnegative compactly supported test function phi.
    """

    __test__ = False

    phi: ScalarField
    X: Optional[VectorField] = None
    f: Optional[ScalarField] = None
    test_id: str = "pair"

    def __post_init__(self):
        if (self.X is None) == (self.f is None):
            raise SupportViolationError(self.test_id, "exactly one of X and f must be given")
        if not self.phi.compact:
            raise SupportViolationError(self.phi.name, "test function is not compactly supported")
        carrier = self.X if self.X is not None else self.f
        if not carrier.compact:
            raise SupportViolationError(carrier.name, "test field is not compactly supported")
        if np.any(self.phi.values < 0):
            raise SupportViolationError(self.phi.name, "test function takes negative values")

    @property
    def grid(self):
        return self.phi.grid


@dataclass(frozen=True)
class LowerBoundSpec:
    """Ric_{mu,N} >= K g"""

    K: float
    N: float = math.inf

    def validate(self, n: int) -> None:
        if math.isnan(self.N) or self.N < n:
            raise DimensionBoundError(self.N, n, "N must be at least the dimension")
