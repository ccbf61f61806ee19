import logging
import math
from typing import Dict, Optional, Tuple

from app.models.scenario import ControllerConfig, RxControllerConfig, RxMode, TxControllerConfig
from app.services.solver_service import GateSource
from app.utils.app_error import ConfigError

logger = logging.getLogger(__name__)


class TransmitterController(GateSource):
    """Phase-shifted full bridge. Gates are (S1, S2, S3, S4): leg A top/bottom, leg B top/bottom."""

    def __init__(self, config: Optional[TxControllerConfig] = None):
        self.config = config or TxControllerConfig()

    def phase_shift(self, t: float) -> float:
        cfg = self.config
        if cfg.ramp_duration <= 0 or t >= cfg.ramp_duration:
            return cfg.final_phase_shift
        return cfg.final_phase_shift * max(t, 0.0) / cfg.ramp_duration

    def gates(self, t: float, measurements: Optional[Dict[str, float]] = None) -> Tuple[bool, ...]:
        theta = (t * self.config.carrier_frequency) % 1.0
        leg_a = theta < 0.5
        leg_b = (theta - self.phase_shift(t) / (2.0 * math.pi)) % 1.0 < 0.5
        return (leg_a, not leg_a, leg_b, not leg_b)


class ReceiverController(GateSource):
    """Average-current PI loop driving the interleaved buck switches."""

    def __init__(self, config: Optional[RxControllerConfig] = None):
        self.config = config or RxControllerConfig()
        cfg = self.config
        self.period = 1.0 / cfg.update_rate
        self.duty = cfg.duty if cfg.mode == RxMode.OPEN_LOOP else 0.0
        self.integral = 0.0
        self._sum = 0.0
        self._count = 0
        self._next_update = cfg.start_time + self.period
        self.updates = 0

    @property
    def n_gates(self) -> int:
        return len(self.config.phase_offsets)

    def _update(self, t: float):
        cfg = self.config
        if self._count:
            average = self._sum / self._count
            error = cfg.current_reference - average
            self.integral = min(max(self.integral + cfg.ki * error * self.period, 0.0), cfg.duty_max)
            self.duty = min(max(cfg.kp * error + self.integral, 0.0), cfg.duty_max)
            self.updates += 1
            logger.debug(f"Rx control update | t={t:.6f} | avg={average:.3f} | duty={self.duty:.4f}")
        self._sum = 0.0
        self._count = 0
        self._next_update += self.period

    def step(self, t: float, measurement: float) -> float:
        """Feed one sample taken at t; returns the duty in force at t."""
        cfg = self.config
        if t < cfg.start_time:
            return 0.0
        if cfg.mode == RxMode.OPEN_LOOP:
            return self.duty
        while t >= self._next_update:
            self._update(t)
        self._sum += measurement
        self._count += 1
        return self.duty

    def gates(self, t: float, measurements: Optional[Dict[str, float]] = None) -> Tuple[bool, ...]:
        cfg = self.config
        measurements = measurements or {}
        closed = cfg.mode == RxMode.CLOSED_LOOP and t >= cfg.start_time
        if closed and cfg.measurement not in measurements:
            raise ConfigError(
                f"Receiver controller measures '{cfg.measurement}' but no probe of that name is recorded",
                {"available": sorted(measurements)},
            )
        duty = self.step(t, measurements.get(cfg.measurement, 0.0))
        if t < cfg.start_time or duty <= 0.0:
            return tuple([False] * self.n_gates)
        phase = (t - cfg.start_time) * cfg.carrier_frequency
        return tuple(((phase + offset) % 1.0) < duty for offset in cfg.phase_offsets)


class WptController(GateSource):
    """Transmitter gates followed by receiver buck gates, in netlist switch order."""

    def __init__(self, config: Optional[ControllerConfig] = None):
        config = config or ControllerConfig()
        self.tx = TransmitterController(config.tx)
        self.rx = ReceiverController(config.rx)

    def gates(self, t: float, measurements: Optional[Dict[str, float]] = None) -> Tuple[bool, ...]:
        return self.tx.gates(t, measurements) + self.rx.gates(t, measurements)


def tx_controller(t: float, config: Optional[TxControllerConfig] = None) -> Tuple[bool, ...]:
    return TransmitterController(config).gates(t)
