# app/models/analysis.py
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np
import pandas as pd
from pydantic import BaseModel, Field, model_validator


class GridSpec(BaseModel):
    """Rectangular z1 grid in the complex plane."""
    re_min: float = -10.0
    re_max: float = 10.0
    im_min: float = -10.0
    im_max: float = 10.0
    n_re: int = Field(default=201, ge=2)
    n_im: int = Field(default=201, ge=2)

    @model_validator(mode="after")
    def validate_ranges(self):
        if not (self.re_min < self.re_max and self.im_min < self.im_max):
            raise ValueError("Grid ranges need min < max on both axes")
        return self

    @classmethod
    def parse(cls, spec: str) -> "GridSpec":
        """'re_min:re_max:im_min:im_max:n' or the same with separate n_re:n_im."""
        parts = [p for p in spec.split(":") if p]
        if len(parts) not in (5, 6):
            raise ValueError(f"Grid '{spec}' must look like re_min:re_max:im_min:im_max:n[:n_im]")
        n_re = int(parts[4])
        n_im = int(parts[5]) if len(parts) == 6 else n_re
        return cls(
            re_min=float(parts[0]), re_max=float(parts[1]),
            im_min=float(parts[2]), im_max=float(parts[3]),
            n_re=n_re, n_im=n_im,
        )


@dataclass(frozen=True)
class StabilityGrid:
    z0: complex
    re: np.ndarray        # (n_re,)
    im: np.ndarray        # (n_im,)
    values: np.ndarray    # (n_im, n_re) |R|, NaN at poles
    poles: np.ndarray     # (n_im, n_re) bool

    def stable_mask(self, tol: float = 0.0) -> np.ndarray:
        return (~self.poles) & (self.values <= 1.0 + tol)

    def to_frame(self) -> pd.DataFrame:
        zr, zi = np.meshgrid(self.re, self.im)
        return pd.DataFrame({
            "z1_re": zr.ravel(),
            "z1_im": zi.ravel(),
            "absR": self.values.ravel(),
        })


class ProbeMetrics(BaseModel):
    probe: str
    rms: float
    peak: float
    window: Tuple[float, float]


class ComparisonRow(BaseModel):
    probe: str
    rms_a: float
    rms_b: float
    peak_a: float
    peak_b: float
    rel_err_rms: float
    rel_err_peak: float


class MetricsReport(BaseModel):
    window: Tuple[float, float]
    valid: bool = True
    reason: str = ""
    metrics: Dict[str, ProbeMetrics] = Field(default_factory=dict)
    comparison: List[ComparisonRow] = Field(default_factory=list)

    @model_validator(mode="after")
    def validate_window(self):
        if not self.window[0] < self.window[1]:
            raise ValueError("Metrics window needs t0 < t1")
        return self

    def worst_error(self) -> float:
        errors = [max(r.rel_err_rms, r.rel_err_peak) for r in self.comparison]
        return max(errors) if errors else 0.0

    def exceeding(self, tolerance: float) -> List[str]:
        return [r.probe for r in self.comparison if max(r.rel_err_rms, r.rel_err_peak) > tolerance]

    def to_frame(self) -> pd.DataFrame:
        columns = list(ComparisonRow.model_fields)
        return pd.DataFrame([r.model_dump() for r in self.comparison], columns=columns)


@dataclass
class ConvergenceResult:
    problem: str
    method: str
    h: np.ndarray
    errors: np.ndarray
    order: float
    local_slopes: np.ndarray          # NaN in the first row
    excluded: List[float] = field(default_factory=list)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"h": self.h, "error": self.errors, "local_slope": self.local_slopes})


@dataclass
class SpectralSweep:
    method: str
    h: np.ndarray
    rho: np.ndarray
    switching_state: Optional[int] = None

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"h": self.h, "rho": self.rho})
