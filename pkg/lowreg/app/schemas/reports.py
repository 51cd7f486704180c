"""
Report schemas returned by the verification pipelines
"""
from enum import Enum
from typing import Dict, List, Optional

from pydantic import BaseModel, Field, model_validator


class Verdict(str, Enum):
    """Outcome of a check"""
    PASS = "PASS"
    FAIL = "FAIL"


UNIVERSAL_QUANTIFIER_NOTE = (
    "A lower bound quantifies over all test fields and volumes; a negative deficit "
    "beyond the defect falsifies it, nonnegative deficits over a finite family are evidence only."
)


class WeakPairingReport(BaseModel):
    """A weak-form functional with its per-integral breakdown"""
    value: float = Field(..., description="Sum of the breakdown terms")
    terms: List[float] = Field(..., description="Individual integrals")
    term_names: List[str] = Field(default_factory=list, description="Labels of the integrals")
    defect: float = Field(0.0, ge=0.0, description="Quadrature-defect estimate")

    @model_validator(mode="after")
    def check_sum(self):
        total = float(sum(self.terms))
        if abs(total - self.value) > 1e-12 * max(1.0, abs(total)):
            raise ValueError("value must equal the sum of its terms")
        return self

    @classmethod
    def from_terms(cls, terms: Dict[str, float], defect: float = 0.0) -> "WeakPairingReport":
        values = [float(v) for v in terms.values()]
        return cls(value=float(sum(values)), terms=values, term_names=list(terms), defect=defect)


class DeficitRecord(BaseModel):
    """One row of a deficit sweep"""
    test_id: str = Field(..., description="Test pair identifier")
    terms: List[float] = Field(..., description="Five pairing integrals followed by four Bochner integrals")
    value: float = Field(..., description="Signed deficit")
    defect: float = Field(..., ge=0.0, description="Quadrature-defect tolerance")
    verdict: Verdict = Field(..., description="FAIL when value < -defect")


class DeficitSweepReport(BaseModel):
    """Aggregated lower-bound sweep over a test family"""
    model: str = Field(..., description="Metric/weight label")
    K: float = Field(..., description="Curvature bound")
    N: float = Field(..., description="Dimension bound (inf allowed)")
    records: List[DeficitRecord] = Field(default_factory=list)
    verdict: Verdict = Field(..., description="FAIL if any record fails")
    witness: Optional[str] = Field(None, description="Most negative failing test id")
    min_deficit: float = Field(..., description="Smallest deficit")
    min_defect: float = Field(..., description="Defect of the smallest deficit")
    max_residual: Optional[float] = Field(None, description="Largest normalised Bochner residual")
    note: str = Field(UNIVERSAL_QUANTIFIER_NOTE)


class BEReport(BaseModel):
    """Weak Bakry-Emery inequality deficit"""
    deficit: float = Field(..., description="LHS - RHS")
    defect: float = Field(..., ge=0.0, description="Quadrature-defect tolerance")
    pairing: float = Field(..., description="Weak Ricci pairing with X = grad f")
    hessian_term: float = Field(..., description="Integral of phi |Hess f|^2")
    gradient_term: float = Field(..., description="K times the integral of phi |grad f|^2")
    laplacian_term: float = Field(..., description="Integral of phi (lap_mu f)^2 / N")
    verdict: Verdict


class PsdReport(BaseModel):
    """Deviation of the decomposed field from the input tensor"""
    epsilon: float = Field(..., gt=0.0)
    c0_deviation: float = Field(..., ge=0.0, description="sup |M_eps - M| on supp M")
    c1_deviation: float = Field(..., ge=0.0, description="sup |D(M_eps - M)| on supp M (finite differences)")
    reconstruction_gap: float = Field(..., ge=0.0, description="sup |sum b_k b_k - M - eps Id|")


class VolumeReport(BaseModel):
    """Chart-local volume growth integral"""
    value: float = Field(..., description="Integral of exp(-Vhat^2) dmu")
    verdict: Verdict


class ConvergenceRow(BaseModel):
    epsilon: float = Field(..., gt=0.0)
    value: float = Field(..., description="Primary error or decay value")
    value_w1p: Optional[float] = Field(None, description="Sobolev norm when measured")
    axis_values: List[float] = Field(default_factory=list, description="Per-axis values")


class ConvergenceReport(BaseModel):
    """Sweep over mollification scales"""
    experiment: str
    p: float
    rows: List[ConvergenceRow] = Field(default_factory=list)
    slope: Optional[float] = Field(None, description="Least-squares log-log slope (descriptive only)")
    monotone: bool = Field(..., description="Values non-increasing as epsilon decreases")
    rate_constant: Optional[float] = Field(None, description="Measured C with |a_eps - a| <= C eps")
    rate_violation: bool = Field(False, description="a_eps family breaks the linear rate")

    def series(self) -> List[float]:
        return [row.value_w1p if row.value_w1p is not None else row.value for row in self.rows]


class ApproxReport(BaseModel):
    """Gradient-field approximation of a vector field"""
    epsilon: float = Field(..., gt=0.0)
    delta: float = Field(..., gt=0.0)
    q: int = Field(..., ge=0, description="Number of pieces h_p grad f_p")
    q_bound: int = Field(..., description="Structural bound 2 (12n)^n (n^2 + 1)")
    centers: int = Field(..., ge=0, description="Active cover centres")
    err_w11: float = Field(..., ge=0.0)
    err_linf: float = Field(..., ge=0.0)
    max_grad_h: float = Field(..., ge=0.0)
    max_sup_h: float = Field(..., ge=0.0)
    max_sup_f: float = Field(..., ge=0.0)
    max_grad_f: float = Field(..., ge=0.0)
    assembly_gap: float = Field(..., ge=0.0, description="Regrouped versus direct assembly")
    buckets_disjoint: bool = True


class CoverReport(BaseModel):
    """Controlled cover diagnostics"""
    delta: float = Field(..., gt=0.0)
    count: int = Field(..., ge=0)
    overlap_measured: int = Field(..., ge=0)
    overlap_bound: int = Field(..., ge=1)
    covers_region: bool


class RotSymReport(BaseModel):
    """Approximation of a nonnegative function by radial bumps"""
    epsilon: float = Field(..., gt=0.0)
    bumps: int = Field(..., ge=0)
    rounds: int = Field(..., ge=0)
    predicted_rounds: Optional[int] = Field(None, description="Round count from the contraction factor")
    overlap_constant: int = Field(..., ge=1)
    residual_max: float = Field(..., description="max (phi - sum chi)")
    residual_min: float = Field(..., description="min (phi - sum chi)")
    fine_bumps: int = Field(0, ge=0, description="Sub-cell bumps used below grid resolution")
    fallback_used: bool = Field(False, description="Rounds stalled and sub-cell bumps absorbed the rest")
    fallback_residual: Optional[float] = Field(None, description="max (phi - sum chi) when the rounds stalled")


class HeatReport(BaseModel):
    """Heat-flow spot checks"""
    model: str
    K: float
    times: List[float] = Field(default_factory=list)
    gradient_violation: List[float] = Field(default_factory=list, description="max over the deep interior per time")
    tolerance: float = Field(..., ge=0.0)
    max_principle_violation: float = Field(0.0, ge=0.0)
    energy_monotone: bool = True
    symmetry_gap: Optional[float] = None
    verdict: Verdict
