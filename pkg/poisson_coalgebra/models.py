"""
Report and configuration models
"""
import json
import math
from enum import Enum
from typing import Any, Dict, List, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, field_validator

from .config import settings


class CheckStatus(str, Enum):
    """Outcome of a single numerical check."""
    PASSED = "passed"
    FAILED = "failed"
    INFORMATIONAL = "informational"
    SKIPPED = "skipped"


class SystemClass(str, Enum):
    """Integrability classes, ordered from weakest to strongest."""
    NOT_VERIFIED = "not-verified"
    QUASI_INTEGRABLE = "quasi-integrable"
    INTEGRABLE = "integrable"
    MIN_SI = "min-SI"
    QMS = "QMS"
    MS = "MS"

    @property
    def strength(self) -> int:
        return list(SystemClass).index(self)

    def at_least(self, other: "SystemClass") -> bool:
        return self.strength >= other.strength


class ReportModel(BaseModel):
    """Base model for every serialized artifact."""
    model_config = ConfigDict(use_enum_values=False, extra="forbid")


# Residual models
class PairResidual(ReportModel):
    """Worst normalized residual of one function pair."""
    first: str
    second: str
    residual: float
    required: bool = True
    status: CheckStatus


class InvolutionMatrix(ReportModel):
    """Max normalized brackets between a Hamiltonian and its integrals."""
    labels: List[str]
    residuals: List[List[float]]
    pairs: List[PairResidual] = Field(default_factory=list)
    tolerance: float
    passed: bool


class RankResult(ReportModel):
    """Numerical functional-independence rank."""
    labels: List[str]
    rank: int
    cutoff: float
    singular_values: List[float]
    point: List[float]
    clouds: int
    degenerate_points: int = 0


class PoissonMapReport(ReportModel):
    """Homomorphism check of a realized N-fold coproduct."""
    coalgebra: str
    n: int
    samples: int
    seed: int
    tolerance: float
    pairs: List[PairResidual]
    max_residual: float
    passed: bool


class LimitReport(ReportModel):
    """Convergence of a parametrized family towards its limit."""
    parameter: str
    values: List[float]
    deviations: Dict[str, List[float]]
    max_deviation: List[float]
    order: Optional[float] = None
    orders: Dict[str, Optional[float]] = Field(default_factory=dict)
    passed: bool


class VerificationReport(ReportModel):
    """Full integrability audit of one catalog entry."""
    system_id: str
    n: int
    claimed_class: SystemClass
    verified_class: SystemClass
    claim_satisfied: bool
    involution: Optional[InvolutionMatrix] = None
    rank: Optional[RankResult] = None
    commuting_integrals: List[str] = Field(default_factory=list)
    involutive_count: int = 0
    independent_count: int = 0
    jacobi_residual: Optional[float] = None
    scale_invariance_residual: Optional[float] = None
    limits: List[LimitReport] = Field(default_factory=list)
    samples: int
    seed: int
    tolerance: float
    notes: List[str] = Field(default_factory=list)
    passed: bool


class LoopRelationFit(ReportModel):
    """Fitted structure coefficients of a loop relation."""
    i: int
    k: int
    lam: float
    mu: float
    f: float
    g: Optional[float] = None
    residual: float


class LoopInvolutionReport(ReportModel):
    """Sampled involution of loop-coproduct Casimir images."""
    coalgebra: str
    n: int
    epsilon: float
    casimir: str
    lambdas: List[float]
    mus: List[float]
    checks: int
    max_residual: float
    tolerance: float
    fits: List[LoopRelationFit] = Field(default_factory=list)
    passed: bool


class TrajectorySummary(ReportModel):
    """Drift summary of an integrated trajectory."""
    system_id: str
    n: int
    step: float
    requested_steps: int
    steps_taken: int
    drift: Dict[str, float]
    max_drift: float
    truncated: bool = False
    truncation_reason: Optional[str] = None
    truncation_time: Optional[float] = None


class CurvatureRow(ReportModel):
    """Closed-form and numeric scalar curvature at one point."""
    point: int
    q: List[float]
    closed: Optional[float]
    numeric: float
    difference: Optional[float]


# Run configuration
class BoxConfig(ReportModel):
    """Sampling box override."""
    q_low: float
    q_high: float
    p_low: float
    p_high: float


class IntegratorConfig(ReportModel):
    """Implicit midpoint settings and initial state."""
    h: float = Field(1e-3, gt=0)
    steps: int = Field(1000, ge=1)
    fp_tol: float = Field(default_factory=lambda: settings.fp_tol)
    max_iter: int = Field(default_factory=lambda: settings.max_iter)
    q0: Optional[List[float]] = None
    p0: Optional[List[float]] = None


class LimitConfig(ReportModel):
    """Parameter sweep for a limit check."""
    parameter: str
    values: List[float] = Field(default_factory=lambda: [0.2, 0.1, 0.05, 0.025])


class RunConfig(ReportModel):
    """Effective configuration of one CLI run."""
    system: str
    n: int = Field(3, ge=1)
    params: Dict[str, Union[float, List[float]]] = Field(default_factory=dict)
    functions: Dict[str, str] = Field(default_factory=dict)
    options: Dict[str, str] = Field(default_factory=dict)
    box: Optional[BoxConfig] = None
    samples: int = Field(default_factory=lambda: settings.samples)
    seed: int = Field(default_factory=lambda: settings.seed)
    tolerance: float = Field(default_factory=lambda: settings.tolerance)
    jobs: int = Field(default_factory=lambda: settings.jobs)
    limits: List[LimitConfig] = Field(default_factory=list)
    integrator: IntegratorConfig = Field(default_factory=IntegratorConfig)
    curvature_points: int = Field(10, ge=1)

    @field_validator("samples")
    @classmethod
    def _enough_samples(cls, value: int) -> int:
        if value < 1:
            raise ValueError("samples must be positive")
        return value


def _canonical(value: Any) -> Any:
    """Round floats to a fixed representation so dumps are byte-stable."""
    if isinstance(value, float):
        if math.isnan(value):
            return "nan"
        if math.isinf(value):
            return "inf" if value > 0 else "-inf"
        return float(format(value, ".12g"))
    if isinstance(value, dict):
        return {str(k): _canonical(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_canonical(v) for v in value]
    return value


def dump_json(payload: Dict[str, Any]) -> str:
    """Serialize a report payload with sorted keys and fixed float formatting."""
    return json.dumps(_canonical(payload), sort_keys=True, indent=2) + "\n"


def report_payload(model: BaseModel) -> Dict[str, Any]:
    return model.model_dump(mode="json")
