# app/models/coupling.py
import math
from dataclasses import dataclass
from enum import Enum
from typing import List, Tuple

import numpy as np
from pydantic import BaseModel, Field, field_validator, model_validator

INDUCTANCE_COLUMNS = ("Lp", "Ls1", "Ls2", "M1", "M2")


@dataclass(frozen=True)
class Inductances:
    Lp: float
    Ls1: float
    Ls2: float
    M1: float
    M2: float

    def matrix(self) -> np.ndarray:
        return np.array([
            [self.Lp, self.M1, self.M2],
            [self.M1, self.Ls1, 0.0],
            [self.M2, 0.0, self.Ls2],
        ])

    def as_tuple(self) -> Tuple[float, float, float, float, float]:
        return (self.Lp, self.Ls1, self.Ls2, self.M1, self.M2)


@dataclass(frozen=True)
class InductanceTable:
    """Position-indexed inductance samples, interpolated piecewise-linearly."""
    positions: np.ndarray          # (N,) metres, strictly increasing
    rows: np.ndarray               # (N, 5) henries, columns INDUCTANCE_COLUMNS
    label: str = "synthetic (not measured data)"

    def __post_init__(self):
        self.positions.setflags(write=False)
        self.rows.setflags(write=False)

    def __len__(self) -> int:
        return len(self.positions)

    def row(self, i: int) -> Inductances:
        return Inductances(*(float(v) for v in self.rows[i]))

    @property
    def span(self) -> Tuple[float, float]:
        return float(self.positions[0]), float(self.positions[-1])


class CouplingState(BaseModel):
    """Flux linkages of the primary and the two receiver coils, V s."""
    psi: List[float] = Field(default_factory=lambda: [0.0, 0.0, 0.0], min_length=3, max_length=3)

    @field_validator("psi")
    @classmethod
    def validate_finite(cls, v):
        if not all(math.isfinite(x) for x in v):
            raise ValueError("Flux linkages must be finite")
        return v

    def vector(self) -> np.ndarray:
        return np.array(self.psi, dtype=float)


class SyntheticTableParams(BaseModel):
    """Nominal coupling values plus the shape of the transit between two transmitter coils."""
    Lp: float = Field(default=35.75e-6, gt=0)
    Ls1: float = Field(default=253.96e-6, gt=0)
    Ls2: float = Field(default=253.96e-6, gt=0)
    M1: float = Field(default=30e-6, ge=0)
    M2: float = Field(default=30e-6, ge=0)
    coupled_span: float = Field(default=2.0, gt=0, description="Table length in metres")
    transition_width: float = Field(default=0.6, description="Raised-cosine transition width in metres")
    floor_fraction: float = Field(default=0.02, ge=0, lt=1)
    lp_dip_fraction: float = Field(default=0.15, ge=0, lt=1)
    n_points: int = Field(default=26, ge=2)

    @model_validator(mode="after")
    def validate_width(self):
        if not self.transition_width > 0:
            raise ValueError("transition_width must be positive")
        return self

    @property
    def m1_center(self) -> float:
        return 0.35 * self.coupled_span

    @property
    def m2_fall_center(self) -> float:
        return 0.55 * self.coupled_span

    @property
    def m2_rise_center(self) -> float:
        return 0.8 * self.coupled_span


class MotionKind(str, Enum):
    STATIONARY = "stationary"
    CONSTANT_VELOCITY = "constant_velocity"
    PIECEWISE = "piecewise"


class MotionProfile(BaseModel):
    kind: MotionKind = MotionKind.STATIONARY
    position: float = 0.0
    velocity: float = 0.0
    start_time: float = Field(default=0.0, ge=0)
    breakpoints: List[Tuple[float, float]] = Field(
        default_factory=list, description="(t seconds, x metres) pairs for piecewise motion"
    )

    @model_validator(mode="after")
    def validate_breakpoints(self):
        if self.kind == MotionKind.PIECEWISE:
            if len(self.breakpoints) < 2:
                raise ValueError("Piecewise motion needs at least two breakpoints")
            times = [t for t, _ in self.breakpoints]
            if any(b <= a for a, b in zip(times, times[1:])):
                raise ValueError("Breakpoint times must be strictly increasing")
        return self

    def position_at(self, t: float) -> float:
        if self.kind == MotionKind.STATIONARY:
            return self.position
        if self.kind == MotionKind.CONSTANT_VELOCITY:
            return self.position + self.velocity * max(0.0, t - self.start_time)
        times = [bp[0] for bp in self.breakpoints]
        xs = [bp[1] for bp in self.breakpoints]
        return float(np.interp(t, times, xs))

    @property
    def is_stationary(self) -> bool:
        return self.kind == MotionKind.STATIONARY
