# app/models/scenario.py
import math
from enum import Enum
from typing import Dict, List, Optional

from pydantic import BaseModel, Field, field_validator, model_validator

from app.models.coupling import MotionProfile, SyntheticTableParams
from app.models.netlist import Netlist
from app.models.solver import SolverConfig


class Topology(str, Enum):
    WPT = "wpt"
    CUSTOM = "custom"


class MotionScenarioKind(str, Enum):
    STARTUP_STATIC = "startup-static"
    DYNAMIC_TRANSIT = "dynamic-transit"


class RxMode(str, Enum):
    OPEN_LOOP = "open-loop"
    CLOSED_LOOP = "closed-loop"


class WptParams(BaseModel):
    """Main parameters of the railway WPT system (SI units)."""
    U_in: float = Field(default=1.5e3, gt=0)
    L_f1: float = Field(default=42.95e-6, gt=0)
    C_p1: float = Field(default=442.8e-9, gt=0)
    C_s1: float = Field(default=62.34e-9, gt=0)
    C_s2: float = Field(default=62.34e-9, gt=0)
    C_f1: float = Field(default=400e-6, gt=0)
    C_f2: float = Field(default=400e-6, gt=0)
    L_B: float = Field(default=1.1e-3, gt=0, description="Each of L_B11, L_B12, L_B21, L_B22")
    R_Lf1: float = Field(default=20e-3, gt=0, description="Winding resistance of L_f1")
    R_s1: float = Field(default=0.1, gt=0, description="Receiver coil resistance, in series with C_s1")
    R_s2: float = Field(default=0.1, gt=0)
    R_LB: float = Field(default=50e-3, gt=0, description="Winding resistance of each buck inductor")
    f_sw_tx: float = Field(default=40e3, gt=0)
    f_sw_rx: float = Field(default=5e3, gt=0)
    C_sc: float = Field(default=1.0, gt=0)
    R_sc: float = Field(default=5e-3, gt=0)
    U_sc0: float = Field(default=960.0, ge=0, description="Supercapacitor precharge")
    U_f0: float = Field(default=960.0, ge=0, description="Receiver filter capacitor precharge")
    I_ref: float = Field(default=200.0, gt=0)
    coupling: SyntheticTableParams = Field(default_factory=lambda: SyntheticTableParams(M1=40e-6, M2=40e-6))

    def default_controller(self) -> "ControllerConfig":
        """Controllers clocked at the switching frequencies and regulating to I_ref."""
        return ControllerConfig(
            tx=TxControllerConfig(carrier_frequency=self.f_sw_tx),
            rx=RxControllerConfig(
                carrier_frequency=self.f_sw_rx, update_rate=self.f_sw_rx, current_reference=self.I_ref
            ),
        )


class TxControllerConfig(BaseModel):
    ramp_duration: float = Field(default=0.01, ge=0)
    final_phase_shift: float = Field(default=0.9 * math.pi, ge=0, le=math.pi)
    carrier_frequency: float = Field(default=40e3, gt=0)


class RxControllerConfig(BaseModel):
    mode: RxMode = RxMode.CLOSED_LOOP
    duty: float = Field(default=0.0, ge=0, le=1, description="Open-loop duty cycle")
    kp: float = Field(default=5e-4, ge=0)
    ki: float = Field(default=0.5, ge=0)
    current_reference: float = Field(default=200.0)
    update_rate: float = Field(default=5e3, gt=0)
    carrier_frequency: float = Field(default=5e3, gt=0)
    start_time: float = Field(default=0.01, ge=0)
    duty_max: float = Field(default=0.95, gt=0, le=1)
    measurement: str = "I_out"
    phase_offsets: List[float] = Field(default_factory=lambda: [0.0, 0.5, 0.25, 0.75])

    @field_validator("phase_offsets")
    @classmethod
    def validate_offsets(cls, v):
        if any(not 0 <= x < 1 for x in v):
            raise ValueError("phase_offsets must lie in [0, 1)")
        return v


class ControllerConfig(BaseModel):
    tx: TxControllerConfig = Field(default_factory=TxControllerConfig)
    rx: RxControllerConfig = Field(default_factory=RxControllerConfig)


class ProbeSpec(BaseModel):
    """A named signal. Binding is 'state:<label>', 'output:<label>', 'coupling:<port>' or 'flux:<port>'."""
    name: str = Field(..., min_length=1)
    unit: str = ""
    binding: str = Field(..., min_length=3)
    scale: float = 1.0

    @field_validator("binding")
    @classmethod
    def validate_binding(cls, v):
        kind = v.split(":", 1)[0]
        if kind not in ("state", "output", "coupling", "flux") or ":" not in v:
            raise ValueError(f"Probe binding '{v}' must start with state:, output:, coupling: or flux:")
        return v


class CouplingConfig(BaseModel):
    table_path: Optional[str] = None
    synthetic: SyntheticTableParams = Field(default_factory=SyntheticTableParams)
    motion: MotionProfile = Field(default_factory=MotionProfile)
    psi0: List[float] = Field(default_factory=lambda: [0.0, 0.0, 0.0])


class SwitchModel(BaseModel):
    r_on: float = Field(default=1e-3, gt=0)
    r_off: float = Field(default=1e6, gt=0)

    @model_validator(mode="after")
    def validate_ratio(self):
        if self.r_off <= self.r_on:
            raise ValueError("r_off must exceed r_on")
        return self


class ScenarioConfig(BaseModel):
    name: str = Field(default="scenario", min_length=1)
    description: str = ""
    topology: Topology = Topology.CUSTOM
    wpt: WptParams = Field(default_factory=WptParams)
    netlist: Optional[Netlist] = None
    coupling: Optional[CouplingConfig] = None
    controller: Optional[ControllerConfig] = None
    fixed_gates: List[bool] = Field(default_factory=list)
    probes: List[ProbeSpec] = Field(default_factory=list)
    initial_state: Dict[str, float] = Field(default_factory=dict)
    switch: SwitchModel = Field(default_factory=SwitchModel)
    solver: SolverConfig = Field(default_factory=SolverConfig)
    t_end: float = Field(default=0.05, ge=0)

    @model_validator(mode="after")
    def validate_topology(self):
        if self.topology == Topology.CUSTOM and self.netlist is None:
            raise ValueError("A custom scenario needs a netlist")
        names = [p.name for p in self.probes]
        if len(set(names)) != len(names):
            raise ValueError("Probe names must be unique")
        return self
