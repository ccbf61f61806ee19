# app/models/waveforms.py
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List

import numpy as np
import pandas as pd

from app.utils.csv_utils import read_csv_with_header, write_csv_atomic


class ProbeSource(str, Enum):
    STATE = "state"          # x_l component
    OUTPUT = "output"        # y_l component
    COUPLING = "coupling"    # coil current, y_nl component
    FLUX = "flux"            # psi component


@dataclass(frozen=True)
class ProbeBinding:
    name: str
    unit: str
    source: ProbeSource
    index: int
    scale: float = 1.0

    @property
    def column(self) -> str:
        return f"{self.name} [{self.unit}]"


def split_column(column: str):
    name, _, unit = column.partition(" [")
    return name, unit.rstrip("]")


@dataclass
class WaveformSet:
    """Time-indexed probe records of one run."""
    t: np.ndarray
    probes: Dict[str, np.ndarray]
    units: Dict[str, str] = field(default_factory=dict)
    metadata: Dict[str, object] = field(default_factory=dict)

    @property
    def diverged(self) -> bool:
        return bool(self.metadata.get("diverged", False))

    @property
    def probe_names(self) -> List[str]:
        return list(self.probes)

    def __len__(self) -> int:
        return len(self.t)

    def peaks(self) -> Dict[str, float]:
        return {name: float(np.max(np.abs(v))) if len(v) else 0.0 for name, v in self.probes.items()}

    def to_frame(self) -> pd.DataFrame:
        data = {"t [s]": self.t}
        for name, values in self.probes.items():
            data[f"{name} [{self.units.get(name, '')}]"] = values
        return pd.DataFrame(data)

    def write_csv(self, path: str):
        write_csv_atomic(self.to_frame(), path, header=self.metadata)

    @classmethod
    def read_csv(cls, path: str) -> "WaveformSet":
        frame, header = read_csv_with_header(path)
        columns = list(frame.columns)
        t = frame[columns[0]].to_numpy(dtype=float)
        probes: Dict[str, np.ndarray] = {}
        units: Dict[str, str] = {}
        for column in columns[1:]:
            name, unit = split_column(column)
            probes[name] = frame[column].to_numpy(dtype=float)
            units[name] = unit
        metadata: Dict[str, object] = dict(header)
        metadata["diverged"] = str(header.get("diverged", "False")) == "True"
        return cls(t=t, probes=probes, units=units, metadata=metadata)
