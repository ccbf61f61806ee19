# app/models/netlist.py
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import List, Optional, Tuple

from pydantic import BaseModel, Field, field_validator, model_validator

GROUND = "0"


class ElementKind(str, Enum):
    RESISTOR = "resistor"
    INDUCTOR = "inductor"
    CAPACITOR = "capacitor"
    VOLTAGE_SOURCE = "voltage_source"
    CURRENT_SOURCE = "current_source"
    SWITCH = "switch"
    DIODE = "diode"


class PortKind(str, Enum):
    CURRENT = "current"   # controlled current source driven by y_nl
    VOLTAGE = "voltage"   # controlled voltage source driven externally


class WaveformKind(str, Enum):
    DC = "dc"
    SINE = "sine"


class SourceWaveform(BaseModel):
    kind: WaveformKind = WaveformKind.DC
    offset: float = 0.0
    amplitude: float = 0.0
    frequency: float = Field(default=0.0, ge=0)
    phase: float = 0.0

    def value_at(self, t: float) -> float:
        if self.kind == WaveformKind.DC:
            return self.offset
        return self.offset + self.amplitude * math.sin(2.0 * math.pi * self.frequency * t + self.phase)


class Element(BaseModel):
    id: str = Field(..., min_length=1)
    kind: ElementKind
    n1: str = Field(..., min_length=1)
    n2: str = Field(..., min_length=1)
    value: float = 0.0
    waveform: Optional[SourceWaveform] = None

    @model_validator(mode="after")
    def validate_value(self):
        if self.n1 == self.n2:
            raise ValueError(f"Element {self.id} connects node {self.n1} to itself")
        if self.kind in (ElementKind.RESISTOR, ElementKind.INDUCTOR, ElementKind.CAPACITOR):
            if not (self.value > 0 and math.isfinite(self.value)):
                raise ValueError(f"Element {self.id} ({self.kind.value}) needs a positive finite value")
        if self.waveform is not None and self.kind not in (ElementKind.VOLTAGE_SOURCE, ElementKind.CURRENT_SOURCE):
            raise ValueError(f"Element {self.id}: only sources take a waveform")
        return self

    @property
    def is_device(self) -> bool:
        return self.kind in (ElementKind.SWITCH, ElementKind.DIODE)

    def source_value(self, t: float) -> float:
        if self.waveform is not None:
            return self.waveform.value_at(t)
        return self.value


class NLPort(BaseModel):
    """Interface port between the switched network and the coupling component."""
    id: str = Field(..., min_length=1)
    kind: PortKind = PortKind.CURRENT
    n1: str
    n2: str
    coupling_index: Optional[int] = Field(default=None, ge=0)
    measured: str = Field(default="", description="Name of the dual quantity returned to the other side")
    value: float = 0.0

    @model_validator(mode="after")
    def validate_port(self):
        if self.kind == PortKind.CURRENT and self.coupling_index is None:
            raise ValueError(f"Current port {self.id} needs a coupling_index")
        if not self.measured:
            self.measured = f"v_{self.id}" if self.kind == PortKind.CURRENT else f"i_{self.id}"
        return self


class Netlist(BaseModel):
    elements: List[Element] = Field(default_factory=list)
    nl_ports: List[NLPort] = Field(default_factory=list)
    ground: str = GROUND

    @field_validator("elements")
    @classmethod
    def validate_unique_ids(cls, v):
        ids = [e.id for e in v]
        duplicates = sorted({i for i in ids if ids.count(i) > 1})
        if duplicates:
            raise ValueError(f"Duplicate element ids: {', '.join(duplicates)}")
        return v

    @model_validator(mode="after")
    def validate_ports(self):
        port_ids = [p.id for p in self.nl_ports]
        element_ids = {e.id for e in self.elements}
        clash = sorted(set(port_ids) & element_ids)
        if clash or len(set(port_ids)) != len(port_ids):
            raise ValueError(f"Port ids must be unique and distinct from element ids: {clash}")
        indices = sorted(p.coupling_index for p in self.current_ports)
        if indices != list(range(len(indices))):
            raise ValueError(f"Current port coupling indices must be 0..{len(indices) - 1}, got {indices}")
        return self

    # ==================== ACCESSORS ====================

    @property
    def current_ports(self) -> List[NLPort]:
        ports = [p for p in self.nl_ports if p.kind == PortKind.CURRENT]
        return sorted(ports, key=lambda p: p.coupling_index)

    @property
    def voltage_ports(self) -> List[NLPort]:
        return [p for p in self.nl_ports if p.kind == PortKind.VOLTAGE]

    @property
    def switches(self) -> List[Element]:
        return [e for e in self.elements if e.kind == ElementKind.SWITCH]

    @property
    def diodes(self) -> List[Element]:
        return [e for e in self.elements if e.kind == ElementKind.DIODE]

    @property
    def devices(self) -> List[Element]:
        """Switches first, then diodes. Bit i of a switching-state index is device i."""
        return self.switches + self.diodes

    def nodes(self) -> List[str]:
        seen: List[str] = []
        for item in list(self.elements) + list(self.nl_ports):
            for node in (item.n1, item.n2):
                if node not in seen:
                    seen.append(node)
        return seen

    def element(self, element_id: str) -> Element:
        for e in self.elements:
            if e.id == element_id:
                return e
        raise KeyError(element_id)


@dataclass(frozen=True)
class SwitchSignals:
    """Conduction state of every controlled switch and diode for one step."""
    gates: Tuple[bool, ...] = field(default_factory=tuple)
    diode_states: Tuple[bool, ...] = field(default_factory=tuple)

    @property
    def k(self) -> int:
        index = 0
        for bit, on in enumerate(self.gates + self.diode_states):
            if on:
                index |= 1 << bit
        return index

    @classmethod
    def from_index(cls, k: int, n_switches: int, n_diodes: int) -> "SwitchSignals":
        bits = [bool((k >> i) & 1) for i in range(n_switches + n_diodes)]
        return cls(tuple(bits[:n_switches]), tuple(bits[n_switches:]))
