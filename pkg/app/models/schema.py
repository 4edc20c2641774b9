import warnings
from enum import Enum
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
import pydantic
from pydantic import BaseModel, ConfigDict, field_validator, model_validator

from app.config import config
from app.models import const
from app.models.exception import NegativeValueError

# pydantic warns about fields named like BaseModel attributes
warnings.filterwarnings(
    "ignore",
    category=UserWarning,
    message="Field name.*shadows an attribute in parent.*",
)


class KernelFamily(str, Enum):
    laplace = "laplace"
    gaussian = "gaussian"
    polynomial = "polynomial"
    tabulated = "tabulated"


class TailKind(str, Enum):
    polynomial = "polynomial"
    exponential = "exponential"
    super_exponential = "super_exponential"
    unclassified = "unclassified"


class GridParams(BaseModel):
    dim: int = 1
    extent: float = 40.0
    points_per_axis: int = 4096


class KernelSpec(BaseModel):
    """
    {"family": "laplace", "delta": 1.0, "dim": 1}
    {"family": "gaussian", "sigma": 1.0, "dim": 2}
    {"family": "polynomial", "alpha": 1.0, "dim": 1}
    {"family": "tabulated", "path": "kernel.csv", "dim": 1}
    """

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    family: KernelFamily
    dim: int = 1
    delta: Optional[float] = None
    sigma: Optional[float] = None
    alpha: Optional[float] = None
    path: Optional[str] = None
    # tabulated samples, loaded from ``path`` or handed over directly
    values: Optional[Any] = pydantic.Field(default=None, exclude=True, repr=False)

    @model_validator(mode="after")
    def _check_parameters(self):
        if self.dim not in (1, 2):
            raise ValueError(f"kernel dim must be 1 or 2, got {self.dim}")
        required = {
            KernelFamily.laplace: "delta",
            KernelFamily.gaussian: "sigma",
            KernelFamily.polynomial: "alpha",
        }.get(self.family)
        if required is not None:
            value = getattr(self, required)
            if value is None or not value > 0:
                raise ValueError(f"{self.family.value} kernel needs a positive '{required}'")
        if self.family == KernelFamily.tabulated and self.values is None and not self.path:
            raise ValueError("tabulated kernel needs 'path' or values")
        return self


class TailClass(BaseModel):
    kind: TailKind
    alpha: Optional[float] = None
    rate: Optional[float] = None
    rms_residual: Optional[float] = None


class Check(BaseModel):
    model_config = ConfigDict(populate_by_name=True)

    name: str
    measured: Optional[float] = None
    bound: Optional[float] = None
    passed: Optional[bool] = pydantic.Field(default=None, serialization_alias="pass", alias="pass")
    informational: bool = False
    note: str = ""

    @field_validator("measured", "bound", mode="before")
    @classmethod
    def _plain_float(cls, v):
        # numpy scalars from the numerics
        return None if v is None else float(v)

    @field_validator("passed", mode="before")
    @classmethod
    def _plain_bool(cls, v):
        return None if v is None else bool(v)


class Report(BaseModel):
    name: str
    checks: List[Check] = []
    window: Optional[Tuple[float, float]] = None
    lambda_grid: List[float] = []
    notes: List[str] = []
    data: Dict[str, Any] = {}

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks if not c.informational and c.passed is not None)

    def failed_checks(self) -> List[str]:
        return [c.name for c in self.checks if not c.informational and c.passed is False]

    def to_dict(self) -> dict:
        return self.model_dump(by_alias=True)


class TailReport(Report):
    model: str = "polynomial"
    fitted: float = 0.0
    amplitude: float = 0.0
    rms_residual: float = 0.0


class ResolventMethod(str, Enum):
    spectral = "spectral"
    neumann = "neumann"


class ResolventResult(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    lam: float
    g: Any = pydantic.Field(exclude=True, repr=False)
    method: ResolventMethod
    terms: Optional[int] = None
    truncation_bound: float = 0.0

    def sidecar(self) -> dict:
        return {
            "lambda": self.lam,
            "method": self.method.value,
            "K": self.terms,
            "truncation_bound": self.truncation_bound,
        }


class DecayCase(str, Enum):
    pure_imaginary_root = "pure_imaginary_root"
    no_root_below_c = "no_root_below_c"
    heavy_tail = "heavy_tail"


class DecayRateResult(BaseModel):
    case: DecayCase
    lam: float
    c: float
    q: Optional[float] = None
    iterations: int = 0


class PotentialProfile(str, Enum):
    box = "box"
    bump = "bump"
    tabulated = "tabulated"


class Potential(BaseModel):
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    support_radius: float
    profile: PotentialProfile = PotentialProfile.box
    height: float = 1.0
    path: Optional[str] = None
    values: Optional[Any] = pydantic.Field(default=None, exclude=True, repr=False)

    @model_validator(mode="after")
    def _check(self):
        if not self.support_radius > 0:
            raise ValueError("potential support_radius must be positive")
        if self.profile != PotentialProfile.tabulated and not 0 < self.height <= 1:
            raise ValueError(f"potential height must lie in (0, 1], got {self.height}")
        if self.profile == PotentialProfile.tabulated and self.values is None and not self.path:
            raise ValueError("tabulated potential needs 'path' or values")
        return self


class GroundState(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    lam: float
    psi: Any = pydantic.Field(exclude=True, repr=False)
    iterations: int
    residual: float
    edge_detected: bool
    rayleigh: List[float] = pydantic.Field(default=[], exclude=True, repr=False)

    def sidecar(self) -> dict:
        return {
            "lambda": self.lam,
            "iterations": self.iterations,
            "residual": self.residual,
            "edge_detected": self.edge_detected,
        }


class EvolutionTrace(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    times: List[float]
    snapshots: List[Any] = pydantic.Field(exclude=True, repr=False)
    m: float
    f: Any = pydantic.Field(exclude=True, repr=False)
    dt: Optional[float] = None

    @model_validator(mode="after")
    def _check(self):
        if len(self.times) != len(self.snapshots):
            raise ValueError("trace has mismatched times and snapshots")
        if self.snapshots and np.any(np.asarray(self.snapshots[0].values) != 0):
            raise ValueError("trace must start from u = 0")
        tol = float(config.numerics.get("negative_tolerance", 1e-10))
        low = min((float(np.min(s.values)) for s in self.snapshots), default=0.0)
        if low < -tol:
            raise NegativeValueError(f"trace has value {low:.3e} below -{tol}", data={"min": low})
        return self

    def manifest(self) -> dict:
        return {"times": self.times, "m": self.m, "dt": self.dt}


class SourceKind(str, Enum):
    box = "box"
    polynomial = "polynomial"
    laplace = "laplace"
    constant = "constant"
    tabulated = "tabulated"


class SourceSpec(BaseModel):
    """f(x) >= 0 for the evolution problem; ``constant`` is a torus-only input."""

    kind: SourceKind = SourceKind.box
    height: float = 1.0
    radius: float = 1.0
    alpha: Optional[float] = None
    delta: Optional[float] = None
    path: Optional[str] = None


class WalkConfig(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    spec: KernelSpec
    seed: int = 0
    n_walks: int = 1_000_000
    binning: Any = None
    # false for exploratory draws that never feed a pass/fail check
    verdict: bool = True

    @model_validator(mode="after")
    def _check(self):
        if self.n_walks < 1:
            raise ValueError("n_walks must be positive")
        if self.verdict and self.n_walks < const.MIN_VERDICT_WALKS:
            raise ValueError(f"verdicts need at least {const.MIN_VERDICT_WALKS} walks, got {self.n_walks}")
        return self


class McParams(BaseModel):
    seed: int = 0
    n_walks: int = 1_000_000
    steps: List[int] = []
    radii: List[float] = []
    binning_points: Optional[int] = None


class ExperimentConfig(BaseModel):
    command: str
    grid: GridParams = GridParams()
    kernel: KernelSpec
    lambdas: List[float] = [1.0]
    potential: Optional[Potential] = None
    source: Optional[SourceSpec] = None
    m: Optional[float] = None
    mc: Optional[McParams] = None
    output_dir: str = "storage/runs/default"
    tolerances: Dict[str, float] = {}
    window: Optional[Tuple[float, float]] = None
    t_end: float = 5.0
    dt: float = 0.01

    @model_validator(mode="after")
    def _check(self):
        if self.command not in const.COMMANDS:
            raise ValueError(f"unknown command '{self.command}', expected one of {const.COMMANDS}")
        if any(not lam > 0 for lam in self.lambdas):
            raise ValueError("lambdas must be positive")
        if self.command == const.COMMAND_GROUNDSTATE and self.potential is None:
            raise ValueError("groundstate requires 'potential'")
        if self.command == const.COMMAND_EVOLVE:
            if self.m is None or not self.m > 0:
                raise ValueError("evolve requires a positive 'm'")
            if self.source is None:
                raise ValueError("evolve requires 'source'")
        if self.command == const.COMMAND_MC_ORACLE and self.mc is None:
            raise ValueError("mc-oracle requires 'mc'")
        bad = [k for k, v in self.tolerances.items() if not v > 0]
        if bad:
            raise ValueError(f"tolerances must be positive: {bad}")
        if self.kernel.dim != self.grid.dim:
            raise ValueError("kernel dim and grid dim differ")
        return self

    def tolerance(self, name: str) -> float:
        return float(self.tolerances.get(name, const.DEFAULT_TOLERANCES[name]))


class McEstimate(BaseModel):
    """Histogram estimate of lambda*G_lambda with per-cell binomial standard errors."""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    lam: float
    estimate: Any = pydantic.Field(exclude=True, repr=False)
    stderr: Any = pydantic.Field(exclude=True, repr=False)
    seed: int
    n_walks: int
    overflow_fraction: float
    total_mass: float
    mean_k: float
    verdict: bool = True
    warnings: List[str] = []

    def manifest(self) -> dict:
        return {
            "lambda": self.lam,
            "seed": self.seed,
            "n_walks": self.n_walks,
            "overflow_fraction": self.overflow_fraction,
            "total_mass": self.total_mass,
            "mean_k": self.mean_k,
            "warnings": self.warnings,
        }
