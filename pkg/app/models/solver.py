# app/models/solver.py
from dataclasses import dataclass, replace
from enum import Enum
from typing import Any, Optional

from pydantic import BaseModel, Field, model_validator

from app.config.solver_config import solver_settings


class SolverMethod(str, Enum):
    IMEX = "imex"
    LATENCY = "latency"
    FORWARD_EULER = "forward-euler"
    TRAPEZOIDAL = "trapezoidal-oracle"


class BackendKind(str, Enum):
    FLOAT64 = "float64"
    FIXED_POINT = "fixed-point"


class StageOrder(str, Enum):
    """Evaluation order of the two interface updates inside one stage."""
    NL_FIRST = "nl_first"
    PWL_FIRST = "pwl_first"


class FixedPointFormat(BaseModel):
    total_bits: int = Field(default=64, le=64)
    integer_bits: int = Field(default=24, ge=2, description="Includes the sign bit")

    @model_validator(mode="after")
    def validate_widths(self):
        if not (2 <= self.integer_bits < self.total_bits <= 64):
            raise ValueError("Fixed-point format needs 2 <= integer_bits < total_bits <= 64")
        return self

    @property
    def frac_bits(self) -> int:
        return self.total_bits - self.integer_bits

    @property
    def raw_max(self) -> int:
        return (1 << (self.total_bits - 1)) - 1

    @property
    def raw_min(self) -> int:
        return -(1 << (self.total_bits - 1))

    @property
    def tag(self) -> str:
        return f"fixed:{self.total_bits}:{self.integer_bits}"


class NewtonSettings(BaseModel):
    max_iter: int = Field(default=solver_settings.NEWTON_MAX_ITER, ge=1)
    tol: float = Field(default=solver_settings.NEWTON_TOL, gt=0)


class SolverConfig(BaseModel):
    method: SolverMethod = SolverMethod.IMEX
    h: float = Field(default=solver_settings.DEFAULT_STEP, gt=0)
    backend: BackendKind = BackendKind.FLOAT64
    fixed_point: FixedPointFormat = Field(default_factory=FixedPointFormat)
    newton: NewtonSettings = Field(default_factory=NewtonSettings)
    decimation: int = Field(default=1, ge=1)

    @model_validator(mode="after")
    def validate_backend(self):
        if self.method == SolverMethod.TRAPEZOIDAL and self.backend == BackendKind.FIXED_POINT:
            raise ValueError("The trapezoidal oracle runs on the float64 backend only")
        return self

    @property
    def backend_tag(self) -> str:
        return self.fixed_point.tag if self.backend == BackendKind.FIXED_POINT else BackendKind.FLOAT64.value

    @classmethod
    def parse_backend(cls, spec: str) -> dict:
        """'float64' or 'fixed:<total>:<integer>' to SolverConfig fields."""
        spec = spec.strip().lower()
        if spec in ("float64", "double"):
            return {"backend": BackendKind.FLOAT64}
        if spec.startswith("fixed"):
            parts = spec.split(":")
            if len(parts) == 1:
                return {"backend": BackendKind.FIXED_POINT}
            if len(parts) != 3:
                raise ValueError(f"Backend '{spec}' must look like fixed:<total_bits>:<integer_bits>")
            return {
                "backend": BackendKind.FIXED_POINT,
                "fixed_point": FixedPointFormat(total_bits=int(parts[1]), integer_bits=int(parts[2])),
            }
        raise ValueError(f"Unknown backend '{spec}'. Available: float64, fixed:<total_bits>:<integer_bits>")


@dataclass(frozen=True)
class SimState:
    """Full simulator state at one step boundary.

    x_l and psi are backend vectors (numpy arrays for float64, raw integer lists for fixed point).
    """
    t: float
    x_l: Any
    psi: Any
    k: int = 0
    x_pos: float = 0.0
    n: int = 0
    backend: str = BackendKind.FLOAT64.value
    newton_iterations: int = 0
    t0: float = 0.0

    def advance(self, x_l: Any, psi: Any, h: float, newton_iterations: int = 0) -> "SimState":
        return replace(self, x_l=x_l, psi=psi, n=self.n + 1, t=self.t0 + (self.n + 1) * h, newton_iterations=newton_iterations)

    def with_switching(self, k: int, x_pos: Optional[float] = None) -> "SimState":
        return replace(self, k=k, x_pos=self.x_pos if x_pos is None else x_pos)
