import logging
from typing import List

from app.models.scenario import ScenarioConfig, Topology

logger = logging.getLogger(__name__)

ALIGNMENT_RTOL = 1e-9


def _steps_per(period: float, h: float) -> float:
    return period / h


def is_commensurate(period: float, h: float) -> bool:
    ratio = _steps_per(period, h)
    return abs(ratio - round(ratio)) <= ALIGNMENT_RTOL * max(1.0, ratio)


def validate_scenario(config: ScenarioConfig) -> List[str]:
    """Informational checks run at setup. Returns warnings; gate transitions snap to the nearest step anyway."""
    h = config.solver.h
    warnings: List[str] = []

    periods = {}
    if config.topology == Topology.WPT:
        ctrl = config.controller or config.wpt.default_controller()
        periods["transmitter carrier"] = 1.0 / ctrl.tx.carrier_frequency
        periods["receiver carrier"] = 1.0 / ctrl.rx.carrier_frequency
        periods["receiver control update"] = 1.0 / ctrl.rx.update_rate

    for name, period in periods.items():
        if not is_commensurate(period, h):
            ratio = _steps_per(period, h)
            jitter = h / 2.0
            warnings.append(
                f"{name} period {period:g} s is {ratio:.4f} steps of h={h:g} s; "
                f"transitions snap to step boundaries (max jitter {jitter:g} s)"
            )

    if config.t_end > 0 and config.t_end < h:
        warnings.append(f"t_end={config.t_end:g} s is shorter than one step; the run takes a single step of h")

    for warning in warnings:
        logger.warning(f"Scenario {config.name}: {warning}")
    return warnings
