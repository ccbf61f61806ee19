import logging
import math
import threading
import time
from dataclasses import dataclass, replace
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.linalg import lu_factor, lu_solve

from app.config.solver_config import solver_settings
from app.models.netlist import SwitchSignals
from app.models.solver import SimState, SolverConfig, SolverMethod, StageOrder
from app.models.waveforms import ProbeBinding, ProbeSource, WaveformSet
from app.services.circuit_model_service import StateSpaceBank
from app.services.coupling_service import MagneticCoupling
from app.services.energy_service import EnergyAudit
from app.services.fixed_point_service import SaturationMonitor, make_backend
from app.utils.app_error import (
    AppError,
    DivergenceError,
    NewtonConvergenceError,
    SingularStepMatrixError,
)

logger = logging.getLogger(__name__)

InputFn = Callable[[float], np.ndarray]


# ==================== SPLIT ODE INTEGRATORS ====================

@dataclass
class SplitProblem:
    """dz/dt = f_ex(z, t) + A_im z + g(t) with a linear implicit part."""
    implicit: np.ndarray
    explicit: Callable[[np.ndarray, float], np.ndarray]
    z0: np.ndarray
    explicit_jacobian: Optional[Callable[[np.ndarray, float], np.ndarray]] = None
    forcing: Optional[Callable[[float], np.ndarray]] = None
    exact: Optional[Callable[[float], np.ndarray]] = None
    name: str = "split"

    def g(self, t: float) -> np.ndarray:
        if self.forcing is None:
            return np.zeros_like(self.z0)
        return self.forcing(t)

    def rhs(self, z: np.ndarray, t: float) -> np.ndarray:
        return self.explicit(z, t) + self.implicit @ z + self.g(t)


def split_step(
    problem: SplitProblem,
    method: SolverMethod,
    z: np.ndarray,
    t: float,
    h: float,
    newton_max_iter: int = solver_settings.NEWTON_MAX_ITER,
    newton_tol: float = solver_settings.NEWTON_TOL,
) -> np.ndarray:
    """One step of a split problem; the same stage formulas the circuit steppers realize."""
    A = problem.implicit
    eye = np.eye(len(z), dtype=np.result_type(A, z))
    if method == SolverMethod.IMEX:
        t_half = t + h / 2.0
        z_half = np.linalg.solve(eye - (h / 2.0) * A, z + (h / 2.0) * (problem.explicit(z, t) + problem.g(t_half)))
        return z + h * (problem.explicit(z_half, t_half) + A @ z_half + problem.g(t_half))
    if method == SolverMethod.LATENCY:
        return np.linalg.solve(eye - h * A, z + h * (problem.explicit(z, t) + problem.g(t + h)))
    if method == SolverMethod.FORWARD_EULER:
        return z + h * problem.rhs(z, t)

    # trapezoidal with Newton on the full right-hand side
    f_n = problem.rhs(z, t)
    z1 = z + h * f_n
    residuals: List[float] = []
    for _ in range(newton_max_iter):
        residual = z1 - z - (h / 2.0) * (f_n + problem.rhs(z1, t + h))
        jac = A.copy()
        if problem.explicit_jacobian is not None:
            jac = jac + problem.explicit_jacobian(z1, t + h)
        delta = np.linalg.solve(eye - (h / 2.0) * jac, -residual)
        z1 = z1 + delta
        residuals.append(float(np.max(np.abs(delta))))
        if residuals[-1] <= newton_tol * max(1.0, float(np.max(np.abs(z1)))):
            return z1
    raise NewtonConvergenceError(t, residuals)


def integrate_split(problem: SplitProblem, method: SolverMethod, h: float, t_end: float) -> np.ndarray:
    steps = int(round(t_end / h))
    z = np.array(problem.z0, copy=True)
    for n in range(steps):
        z = split_step(problem, method, z, n * h, h)
    return z


# ==================== CIRCUIT STEP OPERATORS ====================

@dataclass(frozen=True)
class StepOperator:
    """Backend matrices for one (k, method, h). The per-step path only multiplies and adds."""
    psi_x: object      # h or h/2 times port rows of C
    psi_u: object
    psi_y: object
    x_x: object        # state map applied to the stage state
    x_u: object
    x_y: object
    half_psi_x: object = None
    half_psi_u: object = None
    half_psi_y: object = None
    half_x: object = None
    half_u: object = None
    half_y: object = None


class CircuitModel:
    """A state-space bank bound to a numeric backend and a step size, with its operator cache."""

    def __init__(self, bank: StateSpaceBank, solver_config: SolverConfig, monitor: Optional[SaturationMonitor] = None):
        self.bank = bank
        self.config = solver_config
        self.backend = make_backend(solver_config, monitor)
        self.h = solver_config.h
        self._operators: Dict[Tuple[int, SolverMethod, float, str], StepOperator] = {}
        self._oracle: Dict[Tuple[int, bytes], tuple] = {}
        self._minv: Dict[bytes, object] = {}
        self._lock = threading.Lock()

    def set_step(self, h: float):
        if h != self.h:
            with self._lock:
                self._operators.clear()
                self._oracle.clear()
            self.h = h

    def _inverse(self, matrix: np.ndarray, k: int):
        inv = self.backend.inverse(matrix)
        if inv is None:
            raise SingularStepMatrixError(k, self.h)
        return inv

    def _build_operator(self, k: int, method: SolverMethod) -> StepOperator:
        b = self.backend
        e = self.bank.build_state_space(k)
        h = self.h
        rows = self.bank.port_rows
        C_P, D1_P, D2_P = e.C[rows, :], e.D1[rows, :], e.D2[rows, :]
        eye = np.eye(e.n_states)

        psi = dict(psi_x=b.matrix(h * C_P), psi_u=b.matrix(h * D1_P), psi_y=b.matrix(h * D2_P))
        if method == SolverMethod.IMEX:
            ph = self._inverse(eye - (h / 2.0) * e.A, k)
            return StepOperator(
                **psi,
                x_x=b.matrix(h * e.A),
                x_u=b.matrix(h * e.B1),
                x_y=b.matrix(h * e.B2),
                half_psi_x=b.matrix((h / 2.0) * C_P),
                half_psi_u=b.matrix((h / 2.0) * D1_P),
                half_psi_y=b.matrix((h / 2.0) * D2_P),
                half_x=ph,
                half_u=b.matmul(ph, b.matrix((h / 2.0) * e.B1)),
                half_y=b.matmul(ph, b.matrix((h / 2.0) * e.B2)),
            )
        if method == SolverMethod.LATENCY:
            lx = self._inverse(eye - h * e.A, k)
            return StepOperator(
                **psi,
                x_x=lx,
                x_u=b.matmul(lx, b.matrix(h * e.B1)),
                x_y=b.matmul(lx, b.matrix(h * e.B2)),
            )
        return StepOperator(
            **psi,
            x_x=b.matrix(eye + h * e.A),
            x_u=b.matrix(h * e.B1),
            x_y=b.matrix(h * e.B2),
        )

    def operator(self, k: int, method: SolverMethod) -> StepOperator:
        key = (k, method, self.h, self.backend.name)
        op = self._operators.get(key)
        if op is None:
            built = self._build_operator(k, method)
            with self._lock:
                op = self._operators.setdefault(key, built)
        return op

    def minv(self, coupling: Optional[MagneticCoupling], x_pos: float):
        """Backend copy of M^-1 at x_pos (empty when there is no coupling)."""
        if coupling is None or self.bank.m_nl == 0:
            return self.backend.matrix(np.zeros((0, 0)))
        minv = coupling.minv_at(x_pos)
        key = minv.tobytes()
        cached = self._minv.get(key)
        if cached is None:
            if len(self._minv) > 64:
                self._minv.clear()
            cached = self._minv[key] = self.backend.matrix(minv)
        return cached

    def oracle_factors(self, k: int, minv: np.ndarray):
        """Joint trapezoidal matrices and LU factors for frozen k and M^-1."""
        key = (k, minv.tobytes())
        cached = self._oracle.get(key)
        if cached is not None:
            return cached
        e = self.bank.build_state_space(k)
        rows = self.bank.port_rows
        n, m = e.n_states, minv.shape[0]
        J = np.zeros((n + m, n + m))
        J[:n, :n] = e.A
        J[:n, n:] = e.B2 @ minv
        J[n:, :n] = e.C[rows, :]
        J[n:, n:] = e.D2[rows, :] @ minv
        K = np.vstack([e.B1, e.D1[rows, :]])
        jac = np.eye(n + m) - (self.h / 2.0) * J
        if not np.all(np.isfinite(jac)) or (jac.size and np.linalg.cond(jac) > 1e15):
            raise SingularStepMatrixError(k, self.h)
        factors = (J, K, lu_factor(jac) if jac.size else None)
        if len(self._oracle) > 256:
            self._oracle.clear()
        self._oracle[key] = factors
        return factors


def _check_finite(state_vec: np.ndarray, labels: Sequence[str], t: float):
    if not np.all(np.isfinite(state_vec)):
        bad = int(np.flatnonzero(~np.isfinite(state_vec))[0])
        raise DivergenceError(t, labels[bad] if bad < len(labels) else f"#{bad}", float(state_vec[bad]))


def _finish(state: SimState, model: CircuitModel, x1, psi1, signals: SwitchSignals, newton_iterations: int = 0) -> SimState:
    nxt = state.advance(x1, psi1, model.h, newton_iterations)
    if model.backend.name == "float64":
        labels = list(model.bank.state_labels) + [f"psi_{label}" for label in model.bank.nl_labels]
        _check_finite(np.concatenate([x1, psi1]), labels, nxt.t)
    return replace(nxt, k=signals.k, backend=model.backend.name)


# ==================== CIRCUIT STEPPERS ====================

def imex_step(
    state: SimState,
    model: CircuitModel,
    coupling: Optional[MagneticCoupling],
    inputs: InputFn,
    signals: SwitchSignals,
    order: StageOrder = StageOrder.NL_FIRST,
) -> SimState:
    """Two-stage half-step step: implicit/explicit half step to the midpoint, then an explicit full step."""
    b, h = model.backend, model.h
    op = model.operator(signals.k, SolverMethod.IMEX)
    minv = model.minv(coupling, state.x_pos)
    u_n = b.vector(inputs(state.t))
    u_half = b.vector(inputs(state.t + h / 2.0))
    x, psi = state.x_l, state.psi

    # Stage 1: interfaces from the step-start state
    y_nl = b.mv(minv, psi)

    def psi_half():
        return b.add(psi, b.mv(op.half_psi_x, x), b.mv(op.half_psi_u, u_n), b.mv(op.half_psi_y, y_nl))

    def x_half():
        return b.add(b.mv(op.half_x, x), b.mv(op.half_u, u_half), b.mv(op.half_y, y_nl))

    if order == StageOrder.NL_FIRST:
        psi_h = psi_half()
        x_h = x_half()
    else:
        x_h = x_half()
        psi_h = psi_half()

    # Stage 2: interfaces from the midpoint state
    y_nl_h = b.mv(minv, psi_h)

    def psi_full():
        return b.add(psi, b.mv(op.psi_x, x_h), b.mv(op.psi_u, u_half), b.mv(op.psi_y, y_nl_h))

    def x_full():
        return b.add(x, b.mv(op.x_x, x_h), b.mv(op.x_u, u_half), b.mv(op.x_y, y_nl_h))

    if order == StageOrder.NL_FIRST:
        psi_1 = psi_full()
        x_1 = x_full()
    else:
        x_1 = x_full()
        psi_1 = psi_full()
    return _finish(state, model, x_1, psi_1, signals)


def latency_step(
    state: SimState,
    model: CircuitModel,
    coupling: Optional[MagneticCoupling],
    inputs: InputFn,
    signals: SwitchSignals,
) -> SimState:
    """Implicit network update with the coupling interface lagged by one step."""
    b, h = model.backend, model.h
    op = model.operator(signals.k, SolverMethod.LATENCY)
    minv = model.minv(coupling, state.x_pos)
    u_n = b.vector(inputs(state.t))
    u_next = b.vector(inputs(state.t + h))
    x, psi = state.x_l, state.psi

    y_nl = b.mv(minv, psi)
    psi_1 = b.add(psi, b.mv(op.psi_x, x), b.mv(op.psi_u, u_n), b.mv(op.psi_y, y_nl))
    x_1 = b.add(b.mv(op.x_x, x), b.mv(op.x_u, u_next), b.mv(op.x_y, y_nl))
    return _finish(state, model, x_1, psi_1, signals)


def forward_euler_step(
    state: SimState,
    model: CircuitModel,
    coupling: Optional[MagneticCoupling],
    inputs: InputFn,
    signals: SwitchSignals,
) -> SimState:
    b = model.backend
    op = model.operator(signals.k, SolverMethod.FORWARD_EULER)
    minv = model.minv(coupling, state.x_pos)
    u_n = b.vector(inputs(state.t))
    x, psi = state.x_l, state.psi

    y_nl = b.mv(minv, psi)
    psi_1 = b.add(psi, b.mv(op.psi_x, x), b.mv(op.psi_u, u_n), b.mv(op.psi_y, y_nl))
    x_1 = b.add(b.mv(op.x_x, x), b.mv(op.x_u, u_n), b.mv(op.x_y, y_nl))
    return _finish(state, model, x_1, psi_1, signals)


def trapezoidal_oracle_step(
    state: SimState,
    model: CircuitModel,
    coupling: Optional[MagneticCoupling],
    inputs: InputFn,
    signals: SwitchSignals,
) -> SimState:
    """Fully coupled trapezoidal update solved by Newton with the analytic Jacobian."""
    h = model.h
    n = model.bank.n
    minv = np.zeros((0, 0)) if coupling is None or model.bank.m_nl == 0 else coupling.minv_at(state.x_pos)
    J, K, lu = model.oracle_factors(signals.k, minv)
    z = np.concatenate([state.x_l, state.psi])
    u_n = inputs(state.t)
    u_next = inputs(state.t + h)
    f_n = J @ z + K @ u_n

    settings = model.config.newton
    z1 = z.copy()
    residuals: List[float] = []
    iterations = 0
    while True:
        if iterations >= settings.max_iter:
            raise NewtonConvergenceError(state.t, residuals)
        residual = z1 - z - (h / 2.0) * (f_n + J @ z1 + K @ u_next)
        delta = -lu_solve(lu, residual) if lu is not None else -residual
        z1 = z1 + delta
        iterations += 1
        residuals.append(float(np.max(np.abs(delta))) if delta.size else 0.0)
        if not np.all(np.isfinite(z1)):
            break
        scale = max(1.0, float(np.max(np.abs(z1)))) if z1.size else 1.0
        if residuals[-1] <= settings.tol * scale:
            break
    return _finish(state, model, z1[:n], z1[n:], signals, newton_iterations=iterations)


STEPPERS = {
    SolverMethod.IMEX: imex_step,
    SolverMethod.LATENCY: latency_step,
    SolverMethod.FORWARD_EULER: forward_euler_step,
    SolverMethod.TRAPEZOIDAL: trapezoidal_oracle_step,
}


# ==================== RUN LOOP ====================

class GateSource:
    """Anything that yields switch gates for the step centred on t."""

    def gates(self, t: float, measurements: Dict[str, float]) -> Tuple[bool, ...]:
        raise NotImplementedError


class FixedGates(GateSource):
    def __init__(self, gates: Sequence[bool] = ()):
        self._gates = tuple(bool(g) for g in gates)

    def gates(self, t: float, measurements: Dict[str, float]) -> Tuple[bool, ...]:
        return self._gates


@dataclass
class SimulationSystem:
    """Everything a run needs, prepared from a scenario."""
    bank: StateSpaceBank
    probes: List[ProbeBinding]
    coupling: Optional[MagneticCoupling] = None
    controller_factory: Callable[[], GateSource] = FixedGates
    x0: Optional[np.ndarray] = None
    psi0: Optional[np.ndarray] = None
    scenario_hash: str = ""
    name: str = "scenario"
    energy_sinks: Tuple[str, ...] = ()


def _probe_values(probes: Sequence[ProbeBinding], x: np.ndarray, y: np.ndarray, y_nl: np.ndarray, psi: np.ndarray) -> Dict[str, float]:
    sources = {ProbeSource.STATE: x, ProbeSource.OUTPUT: y, ProbeSource.COUPLING: y_nl, ProbeSource.FLUX: psi}
    return {p.name: p.scale * float(sources[p.source][p.index]) for p in probes}


def run(
    system: SimulationSystem,
    solver_config: SolverConfig,
    t_end: float,
    reference_peaks: Optional[Dict[str, float]] = None,
    divergence_factor: float = solver_settings.DIVERGENCE_FACTOR,
    divergence_limit: float = solver_settings.DIVERGENCE_LIMIT,
    energy_audit: bool = False,
) -> WaveformSet:
    """Fixed-step loop: controllers, switching state, inductance lookup, one method step, probe recording."""
    if t_end < 0:
        raise ValueError("t_end must be non-negative")
    h = solver_config.h
    bank = system.bank
    coupling = system.coupling if bank.m_nl else None
    monitor = SaturationMonitor()
    model = CircuitModel(bank, solver_config, monitor)
    b = model.backend
    stepper = STEPPERS[solver_config.method]
    controller = system.controller_factory()
    inputs = bank.input_vector
    audit = EnergyAudit(bank, system.energy_sinks) if energy_audit else None

    # the last step reaches or passes t_end, and is always recorded
    n_steps = int(math.ceil(t_end / h - 1e-9))
    decimation = solver_config.decimation
    n_records = -(-n_steps // decimation) + 1

    x0 = np.zeros(bank.n) if system.x0 is None else np.asarray(system.x0, dtype=float)
    psi0 = np.zeros(bank.m_nl) if system.psi0 is None else np.asarray(system.psi0, dtype=float)
    x_pos = coupling.position_at(0.0) if coupling else 0.0
    minv_f = coupling.minv_at(x_pos) if coupling else np.zeros((0, 0))

    signals = SwitchSignals(tuple([False] * bank.n_switches), tuple([False] * bank.n_diodes))
    state = SimState(t=0.0, x_l=b.vector(x0), psi=b.vector(psi0), k=signals.k, x_pos=x_pos, backend=b.name)

    x_f, psi_f = b.to_float(state.x_l), b.to_float(state.psi)
    y_nl = minv_f @ psi_f
    y = bank.eval_output(signals.k, x_f, inputs(0.0), y_nl)

    t_rec = np.empty(n_records)
    records = {p.name: np.empty(n_records) for p in system.probes}
    values = _probe_values(system.probes, x_f, y, y_nl, psi_f)
    t_rec[0] = 0.0
    for name, value in values.items():
        records[name][0] = value
    count = 1

    metadata: Dict[str, object] = {
        "scenario": system.name,
        "method": solver_config.method.value,
        "backend": solver_config.backend_tag,
        "h": repr(h),
        "scenario_hash": system.scenario_hash,
        "table": coupling.table.label if coupling else "none",
        "diverged": False,
    }
    logger.info(
        f"Run start | scenario={system.name} | method={solver_config.method.value} | "
        f"backend={solver_config.backend_tag} | h={h} | steps={n_steps}"
    )
    started = time.perf_counter()

    for n in range(n_steps):
        t = state.t
        monitor.clock = t
        gates = controller.gates(t + h / 2.0, values)
        x_pos = coupling.position_at(t) if coupling else 0.0
        if coupling:
            minv_f = coupling.minv_at(x_pos)
            y_nl = minv_f @ psi_f
        signals = bank.resolve_switching_state(gates, y, signals.diode_states, x_f, inputs(t), y_nl)
        state = state.with_switching(signals.k, x_pos)

        try:
            state = stepper(state, model, coupling, inputs, signals)
        except DivergenceError as e:
            logger.error(f"Run diverged | t={e.t:.9g}s | variable={e.variable}")
            metadata.update(diverged=True, diverged_at=e.t, divergence_reason=f"non-finite {e.variable}")
            break
        except AppError as e:
            e.details.setdefault("t", t)
            raise

        x_prev, psi_prev = x_f, psi_f
        x_f, psi_f = b.to_float(state.x_l), b.to_float(state.psi)
        y_nl = minv_f @ psi_f
        y = bank.eval_output(signals.k, x_f, inputs(state.t), y_nl)
        if audit:
            audit.record(signals.k, x_prev, psi_prev, x_f, psi_f, inputs(t), inputs(state.t), minv_f, h)
        values = _probe_values(system.probes, x_f, y, y_nl, psi_f)

        reason = _divergence_reason(values, reference_peaks, divergence_factor, divergence_limit)
        if (n + 1) % decimation == 0 or n + 1 == n_steps or reason:
            t_rec[count] = state.t
            for name, value in values.items():
                records[name][count] = value
            count += 1
        if reason:
            logger.error(f"Run diverged | t={state.t:.9g}s | {reason}")
            metadata.update(diverged=True, diverged_at=state.t, divergence_reason=reason)
            break

    elapsed = time.perf_counter() - started
    metadata.update(monitor.summary())
    metadata["switching_states"] = len(bank.cached_states())
    if audit:
        metadata.update(audit.summary())
    if monitor.flagged:
        logger.warning(f"Fixed-point saturation | count={monitor.count} | first_t={monitor.first_time}")
    logger.info(f"Run finished | steps={state.n} | samples={count} | wall={elapsed:.2f}s")

    units = {p.name: p.unit for p in system.probes}
    return WaveformSet(
        t=t_rec[:count].copy(),
        probes={name: arr[:count].copy() for name, arr in records.items()},
        units=units,
        metadata=metadata,
    )


def _divergence_reason(
    values: Dict[str, float],
    reference_peaks: Optional[Dict[str, float]],
    factor: float,
    limit: float,
) -> str:
    for name, value in values.items():
        if not math.isfinite(value):
            return f"non-finite {name}"
        if reference_peaks and name in reference_peaks and reference_peaks[name] > 0:
            if abs(value) > factor * reference_peaks[name]:
                return f"{name} above {factor:g} x oracle peak"
        elif abs(value) > limit:
            return f"{name} above {limit:g}"
    return ""
