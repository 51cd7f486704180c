"""
Catalog model schemas: named metric/weight pairs with their known curvature facts
"""
from enum import Enum
from typing import List, Optional

from pydantic import BaseModel, Field


class Regularity(str, Enum):
    """Regularity class of the metric coefficients"""
    SMOOTH = "smooth"
    C11 = "C1,1"
    LIPSCHITZ = "C0,1"


class CatalogModel(BaseModel):
    """A named model with component sources written for dimension ``dimension``"""
    name: str = Field(..., description="Catalog key")
    description: str = Field(..., description="One-line summary")
    dimension: int = Field(..., ge=1, le=4)
    metric: List[List[str]] = Field(..., description="n x n metric component sources")
    V: Optional[str] = Field(None, description="Weight potential V = -2 log h")
    lower: List[float] = Field(..., description="Default chart lower corner")
    upper: List[float] = Field(..., description="Default chart upper corner")
    regularity: Regularity = Regularity.SMOOTH
    ricci_factor: Optional[float] = Field(
        None, description="kappa with Ric = kappa g exactly, when the model is an Einstein chart"
    )
    bakry_emery_K: Optional[float] = Field(
        None, description="Largest K with Ric_mu >= K g known exactly (N = inf)"
    )
    bakry_emery_N: Optional[float] = Field(
        None, description="Smallest N for which Ric_mu,N >= K g is known exactly"
    )

    class Config:
        json_schema_extra = {
            "example": {
                "name": "sphere_polar",
                "description": "Round sphere in polar coordinates",
                "dimension": 2,
                "metric": [["1", "0"], ["0", "sin(x1)^2"]],
                "V": None,
                "lower": [0.3, 0.0],
                "upper": [2.8415926535897931, 2.0],
                "regularity": "smooth",
                "ricci_factor": 1.0,
                "bakry_emery_K": 1.0,
                "bakry_emery_N": 2.0,
            }
        }

    def certified_for(self, K: float) -> bool:
        return self.bakry_emery_K is not None and K <= self.bakry_emery_K
