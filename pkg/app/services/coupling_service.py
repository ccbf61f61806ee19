import logging
import math
from typing import Dict, Optional, Union

import numpy as np
import pandas as pd

from app.config.solver_config import solver_settings
from app.models.coupling import (
    INDUCTANCE_COLUMNS,
    CouplingState,
    Inductances,
    InductanceTable,
    MotionProfile,
    SyntheticTableParams,
)
from app.utils.app_error import SingularCouplingError, TableError
from app.utils.csv_utils import read_csv_with_header, write_csv_atomic

logger = logging.getLogger(__name__)

SINGULAR_DENOMINATOR = 1e-30


# ==================== LOOKUP ====================

def inductance_at(table: InductanceTable, x_pos: float) -> Inductances:
    """Piecewise-linear interpolation in x, clamped to the boundary rows."""
    positions = table.positions
    if x_pos <= positions[0]:
        return table.row(0)
    if x_pos >= positions[-1]:
        return table.row(len(positions) - 1)
    i = int(np.searchsorted(positions, x_pos, side="right")) - 1
    if x_pos == positions[i]:
        return table.row(i)
    w = (x_pos - positions[i]) / (positions[i + 1] - positions[i])
    values = (1.0 - w) * table.rows[i] + w * table.rows[i + 1]
    return Inductances(*(float(v) for v in values))


def inverse_inductance(L: Inductances) -> np.ndarray:
    """Closed-form inverse of [[Lp, M1, M2], [M1, Ls1, 0], [M2, 0, Ls2]]."""
    Lp, Ls1, Ls2, M1, M2 = L.as_tuple()
    denominator = Ls2 * M1 ** 2 + Ls1 * M2 ** 2 - Lp * Ls1 * Ls2
    if abs(denominator) < SINGULAR_DENOMINATOR:
        raise SingularCouplingError(denominator)
    numerator = np.array([
        [-Ls1 * Ls2, Ls2 * M1, Ls1 * M2],
        [Ls2 * M1, M2 ** 2 - Lp * Ls2, -M1 * M2],
        [Ls1 * M2, -M1 * M2, M1 ** 2 - Lp * Ls1],
    ])
    return numerator / denominator


def currents_from_fluxes(Minv: np.ndarray, psi: Union[CouplingState, np.ndarray]) -> np.ndarray:
    if isinstance(psi, CouplingState):
        psi = psi.vector()
    return Minv @ psi


def nl_derivative(y_ports: np.ndarray) -> np.ndarray:
    """Flux linkage derivative equals the applied port voltage."""
    return np.array(y_ports, dtype=float, copy=True)


def magnetic_energy(Minv: np.ndarray, psi: np.ndarray) -> float:
    return 0.5 * float(psi @ Minv @ psi)


# ==================== TABLES ====================

def _is_spd(L: Inductances) -> bool:
    try:
        np.linalg.cholesky(L.matrix())
    except np.linalg.LinAlgError:
        return False
    return True


def validate_table(table: InductanceTable, sweep_points: int = solver_settings.SPD_SWEEP_POINTS) -> bool:
    positions = table.positions
    if len(positions) < 2:
        raise TableError("Inductance table needs at least two samples")
    if table.rows.shape != (len(positions), len(INDUCTANCE_COLUMNS)):
        raise TableError(f"Inductance rows must have shape (N, 5), got {table.rows.shape}")
    if not (np.all(np.isfinite(positions)) and np.all(np.isfinite(table.rows))):
        raise TableError("Inductance table contains non-finite values")
    if np.any(np.diff(positions) <= 0):
        raise TableError("Table positions must be strictly increasing")

    sweep = np.union1d(np.linspace(positions[0], positions[-1], sweep_points), positions)
    for x in sweep:
        if not _is_spd(inductance_at(table, float(x))):
            raise TableError(f"Inductance matrix not positive definite at x={x:.6g} m", {"x": float(x)})
    logger.debug(f"Inductance table valid | samples={len(positions)} | sweep={len(sweep)}")
    return True


def _raised_cosine(x: float, center: float, width: float) -> float:
    """0 before the transition, 1 after, half-cosine in between."""
    start = center - width / 2.0
    if x <= start:
        return 0.0
    if x >= start + width:
        return 1.0
    return 0.5 * (1.0 - math.cos(math.pi * (x - start) / width))


def synth_table(params: SyntheticTableParams) -> InductanceTable:
    """Synthetic transit table: M1 falls off, M2 dips and recovers, Lp sags with coupling."""
    if not params.transition_width > 0:
        raise TableError("transition_width must be positive")
    positions = np.linspace(0.0, params.coupled_span, params.n_points)
    m1_floor = params.floor_fraction * params.M1
    m2_floor = params.floor_fraction * params.M2
    rows = []
    for x in positions:
        fall1 = _raised_cosine(x, params.m1_center, params.transition_width)
        dip2 = _raised_cosine(x, params.m2_fall_center, params.transition_width) - _raised_cosine(
            x, params.m2_rise_center, params.transition_width
        )
        m1 = params.M1 - (params.M1 - m1_floor) * fall1
        m2 = params.M2 - (params.M2 - m2_floor) * dip2
        lost = 0.5 * (fall1 + dip2)
        lp = params.Lp * (1.0 - params.lp_dip_fraction * lost)
        row = Inductances(lp, params.Ls1, params.Ls2, m1, m2)
        if not _is_spd(row):
            raise TableError(f"Synthetic table row at x={x:.4g} m is not positive definite", {"x": float(x)})
        rows.append(row.as_tuple())
    table = InductanceTable(positions=positions, rows=np.array(rows))
    logger.info(f"Synthetic inductance table | points={len(positions)} | span={params.coupled_span} m")
    return table


def load_table_csv(path: str, sweep_points: int = solver_settings.SPD_SWEEP_POINTS) -> InductanceTable:
    try:
        frame, header = read_csv_with_header(path)
    except (OSError, pd.errors.ParserError) as e:
        raise TableError(f"Could not read inductance table {path}: {e}")
    expected = ["x"] + list(INDUCTANCE_COLUMNS)
    if list(frame.columns) != expected:
        raise TableError(f"Inductance table columns must be {expected}, got {list(frame.columns)}")
    table = InductanceTable(
        positions=frame["x"].to_numpy(dtype=float),
        rows=frame[list(INDUCTANCE_COLUMNS)].to_numpy(dtype=float),
        label=header.get("label", path),
    )
    validate_table(table, sweep_points)
    return table


def save_table_csv(table: InductanceTable, path: str):
    frame = pd.DataFrame(table.rows, columns=list(INDUCTANCE_COLUMNS))
    frame.insert(0, "x", table.positions)
    write_csv_atomic(frame, path, header={"label": table.label})


# ==================== RUNTIME COUPLING ====================

class MagneticCoupling:
    """Inductance table plus motion profile, as seen by the run loop."""

    def __init__(self, table: InductanceTable, motion: Optional[MotionProfile] = None, validate: bool = True):
        if validate:
            validate_table(table)
        self.table = table
        self.motion = motion or MotionProfile()
        self._minv_cache: Dict[float, np.ndarray] = {}

    def position_at(self, t: float) -> float:
        return self.motion.position_at(t)

    def inductances_at(self, x_pos: float) -> Inductances:
        return inductance_at(self.table, x_pos)

    def minv_at(self, x_pos: float) -> np.ndarray:
        cached = self._minv_cache.get(x_pos)
        if cached is not None:
            return cached
        minv = inverse_inductance(self.inductances_at(x_pos))
        minv.setflags(write=False)
        if self.motion.is_stationary:
            self._minv_cache[x_pos] = minv
        return minv
