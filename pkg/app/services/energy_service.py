import logging
from typing import Dict, Sequence

import numpy as np

from app.services.circuit_model_service import StateSpaceBank
from app.services.coupling_service import magnetic_energy
from app.utils.app_error import ConfigError

logger = logging.getLogger(__name__)


class EnergyAudit:
    """Running energy balance of one run.

    Each step's powers are evaluated at the average of its start and end excitation under
    the step's switching state and inductances, so a trapezoidal step closes the balance up
    to the Newton tolerance. Capacitors named as sinks count as delivered, not stored.
    """

    def __init__(self, bank: StateSpaceBank, sinks: Sequence[str] = ()):
        ids = [c.id for c in bank.capacitors]
        unknown = sorted(set(sinks) - set(ids))
        if unknown:
            raise ConfigError(f"Energy sinks must be capacitors: {', '.join(unknown)}", {"capacitors": ids})
        self.bank = bank
        self._half_c = np.array([0.5 * c.value for c in bank.capacitors])
        self._half_l = np.array([0.5 * l.value for l in bank.inductors])
        self._sink = np.array([c.id in sinks for c in bank.capacitors], dtype=bool)
        self.supplied = 0.0
        self.dissipated = 0.0
        self.stored = 0.0
        self.delivered = 0.0
        self.steps = 0

    def _cap_energy(self, x: np.ndarray) -> np.ndarray:
        v = x[: len(self._half_c)]
        return self._half_c * v * v

    def _ind_energy(self, x: np.ndarray) -> float:
        i = x[len(self._half_c):]
        return float(self._half_l @ (i * i))

    def record(self, k: int, x0, psi0, x1, psi1, u0, u1, minv: np.ndarray, h: float):
        rows = self.bank.power_rows(k)
        x_mid = 0.5 * (x0 + x1)
        psi_mid = 0.5 * (psi0 + psi1)
        y_mid = minv @ psi_mid if minv.size else np.zeros(0)
        e = np.concatenate([x_mid, 0.5 * (u0 + u1), y_mid])
        self.supplied += h * rows.supplied(e)
        self.dissipated += h * rows.dissipated(e)

        cap = self._cap_energy(x1) - self._cap_energy(x0)
        self.delivered += float(cap[self._sink].sum())
        self.stored += float(cap[~self._sink].sum()) + self._ind_energy(x1) - self._ind_energy(x0)
        if minv.size:
            self.stored += magnetic_energy(minv, psi1) - magnetic_energy(minv, psi0)
        self.steps += 1

    @property
    def residual(self) -> float:
        return self.supplied - self.dissipated - self.stored - self.delivered

    @property
    def throughput(self) -> float:
        return max(abs(self.supplied), self.dissipated + abs(self.stored) + abs(self.delivered))

    def summary(self) -> Dict[str, float]:
        fraction = abs(self.residual) / self.throughput if self.throughput > 0 else 0.0
        logger.info(
            f"Energy audit | in={self.supplied:.6g} J | dissipated={self.dissipated:.6g} J | "
            f"stored={self.stored:.6g} J | delivered={self.delivered:.6g} J | residual={fraction:.3e}"
        )
        return {
            "energy_in": self.supplied,
            "energy_dissipated": self.dissipated,
            "energy_stored": self.stored,
            "energy_delivered": self.delivered,
            "energy_residual": self.residual,
            "energy_residual_fraction": fraction,
        }
