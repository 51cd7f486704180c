"""
Custom exception classes
"""
from typing import Optional, Dict, Any, List, Sequence


class LowRegError(Exception):
    """Base exception for toolkit errors"""

    def __init__(
        self,
        message: str,
        code: str,
        exit_status: int = 2,
        details: Optional[Dict[str, Any]] = None
    ):
        self.message = message
        self.code = code
        self.exit_status = exit_status
        self.details = details or {}
        super().__init__(self.message)


class ExprSyntaxError(LowRegError):
    """Raised when an expression source cannot be parsed"""

    def __init__(self, reason: str, offset: int, source: str):
        self.offset = offset
        super().__init__(
            message=f"Syntax error at byte {offset}: {reason}",
            code="EXPR_SYNTAX",
            details={"offset": offset, "source": source, "reason": reason}
        )


class UnknownIdentifierError(LowRegError):
    """Raised when an expression names an unknown variable or function"""

    def __init__(self, name: str, offset: int):
        self.name = name
        super().__init__(
            message=f"Unknown identifier '{name}'",
            code="UNKNOWN_IDENTIFIER",
            details={"identifier": name, "offset": offset}
        )


class VariableIndexError(LowRegError):
    """Raised when a variable index exceeds the declared dimension"""

    def __init__(self, index: int, dimension: int):
        super().__init__(
            message=f"variable index out of range: x{index} with n={dimension}",
            code="VARIABLE_INDEX",
            details={"index": index, "dimension": dimension}
        )


class EvaluationDomainError(LowRegError):
    """Raised when an expression is evaluated outside its domain"""

    def __init__(self, operation: str, node: Any, coordinates: Optional[List[float]] = None):
        self.node = node
        super().__init__(
            message=f"Domain error in {operation}",
            code="EVAL_DOMAIN",
            details={"operation": operation, "node": str(node), "coordinates": coordinates}
        )


class DifferentiationError(LowRegError):
    """Raised when an expression cannot be differentiated symbolically"""

    def __init__(self, reason: str):
        super().__init__(
            message=f"Cannot differentiate: {reason}",
            code="DIFFERENTIATION",
            details={"reason": reason}
        )


class GridError(LowRegError):
    """Raised when a chart grid is malformed"""

    def __init__(self, reason: str, **details: Any):
        super().__init__(
            message=f"Invalid chart grid: {reason}",
            code="GRID_INVALID",
            details={"reason": reason, **details}
        )


class FieldShapeError(LowRegError):
    """Raised when field components do not match the grid or each other"""

    def __init__(self, reason: str, **details: Any):
        super().__init__(
            message=f"Field shape mismatch: {reason}",
            code="FIELD_SHAPE",
            details={"reason": reason, **details}
        )


class MissingProviderError(LowRegError):
    """Raised when analytic mode is requested for a field without providers"""

    def __init__(self, field_name: str):
        super().__init__(
            message=f"Analytic mode requested but '{field_name}' has no analytic providers",
            code="MISSING_PROVIDER",
            details={"field": field_name}
        )


class ModeMismatchError(LowRegError):
    """Raised when a weight was differentiated in another mode than the geometry"""

    def __init__(self, field_name: str, field_mode: str, mode: str):
        super().__init__(
            message=f"'{field_name}' carries {field_mode} derivatives but the geometry is {mode}",
            code="MODE_MISMATCH",
            details={"field": field_name, "field_mode": field_mode, "mode": mode}
        )


class NotPositiveDefiniteError(LowRegError):
    """Raised when a metric fails the Cholesky test at some node"""

    def __init__(self, node: Sequence[float]):
        super().__init__(
            message="Metric is not positive definite",
            code="METRIC_NOT_PD",
            details={"node": [float(c) for c in node]}
        )


class NotPositiveSemidefiniteError(LowRegError):
    """Raised when a tensor field has a negative eigenvalue beyond tolerance"""

    def __init__(self, eigenvalue: float, node: Sequence[float]):
        super().__init__(
            message=f"Tensor field is not positive semidefinite (eigenvalue {eigenvalue:.3e})",
            code="NOT_PSD",
            details={"eigenvalue": eigenvalue, "node": [float(c) for c in node]}
        )


class SupportViolationError(LowRegError):
    """Raised when a test object is not compactly supported inside the interior"""

    def __init__(self, field_name: str, reason: str):
        super().__init__(
            message=f"Support violation for {field_name}: {reason}",
            code="SUPPORT_VIOLATION",
            details={"field": field_name, "reason": reason}
        )


class DimensionBoundError(LowRegError):
    """Raised when the dimension bound N is inadmissible"""

    def __init__(self, N: float, n: int, reason: str):
        super().__init__(
            message=f"Inadmissible dimension bound N={N} for n={n}: {reason}",
            code="DIMENSION_BOUND",
            details={"N": N, "n": n, "reason": reason}
        )


class InadmissibleEpsilonError(LowRegError):
    """Raised when a mollification scale does not fit inside the chart"""

    def __init__(self, epsilon: float, reason: str):
        super().__init__(
            message=f"Inadmissible epsilon {epsilon}: {reason}",
            code="EPSILON_INADMISSIBLE",
            details={"epsilon": epsilon, "reason": reason}
        )


class DeltaTooLargeError(LowRegError):
    """Raised when a cover scale exceeds the admissible bound"""

    def __init__(self, delta: float, delta_max: float):
        super().__init__(
            message=f"Scale delta={delta:.4g} exceeds admissible bound {delta_max:.4g}",
            code="DELTA_TOO_LARGE",
            details={"delta": delta, "delta_max": delta_max}
        )


class ResolutionError(LowRegError):
    """Raised when the grid cannot resolve a construction"""

    def __init__(self, scale: float, spacing: float, what: str):
        super().__init__(
            message=(
                f"Grid cannot resolve {what}: scale {scale:.4g} is below two cells "
                f"({2 * spacing:.4g}); refine the grid"
            ),
            code="RESOLUTION",
            details={"scale": scale, "spacing": spacing, "what": what}
        )


class SolverConvergenceError(LowRegError):
    """Raised when the conjugate-gradient solve does not converge"""

    def __init__(self, iterations: int, residual: float):
        super().__init__(
            message=f"Linear solver did not converge after {iterations} iterations",
            code="SOLVER_CONVERGENCE",
            details={"iterations": iterations, "residual": residual}
        )


class UncertifiedModelError(LowRegError):
    """Raised when a check requires a curvature bound the model does not carry"""

    def __init__(self, model: str, K: float):
        super().__init__(
            message=f"Model '{model}' is not certified for a curvature bound K={K}",
            code="UNCERTIFIED_MODEL",
            details={"model": model, "K": K}
        )


class UnknownCatalogModelError(LowRegError):
    """Raised when a catalog model name is not known"""

    def __init__(self, name: str, known: List[str]):
        super().__init__(
            message=f"Unknown catalog model '{name}'",
            code="UNKNOWN_MODEL",
            details={"name": name, "known": known}
        )


class ConfigValidationError(LowRegError):
    """Raised when an experiment configuration fails validation"""

    def __init__(self, errors: List[Dict[str, Any]], path: Optional[str] = None):
        self.errors = errors
        fields = ", ".join(e["field"] for e in errors)
        super().__init__(
            message=f"Invalid configuration: {fields}",
            code="CONFIG_INVALID",
            details={"errors": errors, "path": path}
        )


class NonPositiveWeightError(LowRegError):
    """Raised when a weight h is not strictly positive"""

    def __init__(self, minimum: float, node: Sequence[float]):
        super().__init__(
            message=f"Weight h must be positive (minimum {minimum:.3e})",
            code="WEIGHT_NOT_POSITIVE",
            details={"minimum": minimum, "node": [float(c) for c in node]}
        )


class NegativeFieldError(LowRegError):
    """Raised when a field required to be nonnegative takes negative values"""

    def __init__(self, field_name: str, minimum: float):
        super().__init__(
            message=f"{field_name} must be nonnegative (minimum {minimum:.3e})",
            code="NEGATIVE_FIELD",
            details={"field": field_name, "minimum": minimum}
        )
