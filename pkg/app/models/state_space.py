# app/models/state_space.py
from dataclasses import dataclass
from typing import Tuple

import numpy as np


@dataclass(frozen=True)
class StateSpaceEntry:
    """Matrices of one switching state: dx/dt = A x + B1 u + B2 y_nl, y = C x + D1 u + D2 y_nl."""
    k: int
    A: np.ndarray
    B1: np.ndarray
    B2: np.ndarray
    C: np.ndarray
    D1: np.ndarray
    D2: np.ndarray

    def __post_init__(self):
        for name in ("A", "B1", "B2", "C", "D1", "D2"):
            getattr(self, name).setflags(write=False)

    @property
    def n_states(self) -> int:
        return self.A.shape[0]

    @property
    def shape(self) -> Tuple[int, int, int, int]:
        """(n, m_u, m_nl, p)"""
        return self.A.shape[0], self.B1.shape[1], self.B2.shape[1], self.C.shape[0]


@dataclass(frozen=True)
class FrozenSystem:
    """A single switching state with frozen inductances, restricted to the coupling ports.

    Joint state is [x_l; psi]. Sources are zero.
    """
    A: np.ndarray
    B2: np.ndarray
    C: np.ndarray
    D2: np.ndarray
    Minv: np.ndarray
    state_labels: Tuple[str, ...] = ()

    @property
    def n_states(self) -> int:
        return self.A.shape[0]

    @property
    def n_coupled(self) -> int:
        return self.Minv.shape[0]

    def joint_labels(self) -> Tuple[str, ...]:
        return tuple(self.state_labels) + tuple(f"psi{i}" for i in range(self.n_coupled))


@dataclass(frozen=True)
class PowerRows:
    """Rows over the excitation e = [x; u; y_nl] for the power terms of one switching state."""
    k: int
    resistive: np.ndarray      # voltage across each resistor, switch and diode
    conductance: np.ndarray
    source_v: np.ndarray       # voltage across each source, n1 minus n2
    source_i: np.ndarray       # current through each source, n1 to n2

    def dissipated(self, e: np.ndarray) -> float:
        v = self.resistive @ e
        return float(self.conductance @ (v * v))

    def supplied(self, e: np.ndarray) -> float:
        return -float((self.source_v @ e) @ (self.source_i @ e))
