import logging
from typing import Callable, Dict, Optional, Sequence

import numpy as np
from scipy.integrate import trapezoid

from app.models.analysis import (
    ComparisonRow,
    ConvergenceResult,
    GridSpec,
    MetricsReport,
    ProbeMetrics,
    SpectralSweep,
    StabilityGrid,
)
from app.models.solver import SolverMethod
from app.models.state_space import FrozenSystem
from app.models.waveforms import WaveformSet
from app.services.solver_service import SplitProblem, integrate_split
from app.utils.app_error import AnalysisError, MetricsError, PoleError, ProbeMismatchError

logger = logging.getLogger(__name__)

NOISE_FLOOR = 100.0 * np.finfo(float).eps
POLE_TOL = 1e-12
POWER_TOL = 1e-10
POWER_MAX_ITER = 5000


# ==================== SCALAR TEST EQUATION ====================

def amplification(z0: complex, z1: complex) -> complex:
    """Growth factor of the half-step IMEX scheme on dy/dt = (l0 + l1) y with z0 = h l0 explicit, z1 = h l1 implicit."""
    z0, z1 = complex(z0), complex(z1)
    if z1 == 2:
        raise PoleError(z1)
    return ((z0 + 1) ** 2 + 1 + z1 * (z0 + 1)) / (2 - z1)


def stability_region(z0: complex, grid: Optional[GridSpec] = None) -> StabilityGrid:
    grid = grid or GridSpec()
    re = np.linspace(grid.re_min, grid.re_max, grid.n_re)
    im = np.linspace(grid.im_min, grid.im_max, grid.n_im)
    z1 = re[np.newaxis, :] + 1j * im[:, np.newaxis]
    z0 = complex(z0)

    denominator = 2 - z1
    poles = np.abs(denominator) <= POLE_TOL
    safe = np.where(poles, 1.0, denominator)
    values = np.abs(((z0 + 1) ** 2 + 1 + z1 * (z0 + 1)) / safe)
    values[poles] = np.nan
    if poles.any():
        logger.info(f"Stability grid has {int(poles.sum())} pole cell(s) at z1 = 2")
    return StabilityGrid(z0=z0, re=re, im=im, values=values, poles=poles)


# ==================== ONE-STEP MATRICES ====================

def _joint_blocks(frozen: FrozenSystem):
    n, m = frozen.n_states, frozen.n_coupled
    A_im = np.zeros((n + m, n + m))
    A_im[:n, :n] = frozen.A
    E = np.zeros((n + m, n + m))
    if m:
        E[:n, n:] = frozen.B2 @ frozen.Minv
        E[n:, :n] = frozen.C
        E[n:, n:] = frozen.D2 @ frozen.Minv
    return A_im, E


def _solve(matrix: np.ndarray, rhs: np.ndarray, method: SolverMethod, h: float) -> np.ndarray:
    if matrix.size == 0:
        return rhs
    try:
        return np.linalg.solve(matrix, rhs)
    except np.linalg.LinAlgError:
        raise AnalysisError(f"Implicit factor is singular for {method.value} at h={h}")


def one_step_matrix(method: SolverMethod, frozen: FrozenSystem, h: float) -> np.ndarray:
    """Linear map of [x_l; psi] over one step of the given method, sources at zero."""
    if not h > 0:
        raise AnalysisError("Step size must be positive")
    A_im, E = _joint_blocks(frozen)
    eye = np.eye(A_im.shape[0])
    if method == SolverMethod.IMEX:
        half = _solve(eye - (h / 2.0) * A_im, eye + (h / 2.0) * E, method, h)
        return eye + h * (A_im + E) @ half
    if method == SolverMethod.LATENCY:
        return _solve(eye - h * A_im, eye + h * E, method, h)
    if method == SolverMethod.FORWARD_EULER:
        return eye + h * (A_im + E)
    J = A_im + E
    return _solve(eye - (h / 2.0) * J, eye + (h / 2.0) * J, method, h)


def _power_iteration(G: np.ndarray) -> Optional[float]:
    rng = np.random.default_rng(0)
    v = rng.standard_normal(G.shape[0])
    v /= np.linalg.norm(v)
    estimate = 0.0
    for _ in range(POWER_MAX_ITER):
        w = G @ v
        norm = float(np.linalg.norm(w))
        if norm == 0.0:
            return 0.0
        converged = abs(norm - estimate) <= POWER_TOL * norm
        estimate = norm
        v = w / norm
        if converged:
            # a dominant complex pair never settles into an eigenvector
            mu = float(v @ G @ v)
            if np.linalg.norm(G @ v - mu * v) <= 1e-6 * max(abs(mu), 1e-300):
                return abs(mu)
            return None
    return None


def spectral_radius(G: np.ndarray, method: str = "dense") -> float:
    G = np.asarray(G, dtype=float)
    if G.ndim != 2 or G.shape[0] != G.shape[1]:
        raise AnalysisError(f"Spectral radius needs a square matrix, got shape {G.shape}")
    if G.size == 0:
        return 0.0
    if method == "power":
        rho = _power_iteration(G)
        if rho is not None:
            return rho
        logger.debug("Power iteration did not converge, falling back to dense eigensolve")
    try:
        return float(np.max(np.abs(np.linalg.eigvals(G))))
    except np.linalg.LinAlgError as e:
        raise AnalysisError(f"Eigenvalue computation failed: {e}")


def spectral_sweep(frozen: FrozenSystem, method: SolverMethod, h_values: Sequence[float]) -> SpectralSweep:
    rho = np.array([spectral_radius(one_step_matrix(method, frozen, float(h))) for h in h_values])
    logger.info(f"Spectral sweep | method={method.value} | points={len(rho)} | max_rho={rho.max():.6g}")
    return SpectralSweep(method=method.value, h=np.asarray(h_values, dtype=float), rho=rho)


def parse_sweep(spec: str) -> np.ndarray:
    """'start:stop:step' inclusive of stop, e.g. 10e-9:200e-9:10e-9 gives 20 values."""
    parts = spec.split(":")
    if len(parts) != 3:
        raise ValueError(f"Sweep '{spec}' must look like start:stop:step")
    start, stop, step = (float(p) for p in parts)
    if not (step > 0 and stop >= start > 0):
        raise ValueError("Sweep needs 0 < start <= stop and a positive step")
    count = int(round((stop - start) / step)) + 1
    return start + step * np.arange(count)


# ==================== CONVERGENCE ====================

def decay_problem() -> SplitProblem:
    return SplitProblem(
        implicit=np.zeros((1, 1)),
        explicit=lambda z, t: -z,
        explicit_jacobian=lambda z, t: -np.eye(1),
        z0=np.array([1.0]),
        exact=lambda t: np.array([np.exp(-t)]),
        name="decay",
    )


def cubic_problem() -> SplitProblem:
    """dx/dt = -x^3 (explicit) - 5x (implicit), x(0) = 1."""
    return SplitProblem(
        implicit=np.array([[-5.0]]),
        explicit=lambda z, t: -z ** 3,
        explicit_jacobian=lambda z, t: np.diag(-3.0 * z ** 2),
        z0=np.array([1.0]),
        exact=lambda t: np.array([1.0 / np.sqrt(1.2 * np.exp(10.0 * t) - 0.2)]),
        name="cubic",
    )


PROBLEMS: Dict[str, Callable[[], SplitProblem]] = {
    "decay": decay_problem,
    "cubic": cubic_problem,
}

DEFAULT_H_LIST = (1e-3, 5e-4, 2.5e-4, 1.25e-4)
DEFAULT_T_END = 1.0


def convergence_order(
    problem: SplitProblem,
    method: SolverMethod,
    h_list: Sequence[float] = DEFAULT_H_LIST,
    t_end: float = DEFAULT_T_END,
) -> ConvergenceResult:
    """Least-squares slope of log(relative error) against log(h) at t_end."""
    h_values = np.array(sorted((float(h) for h in h_list), reverse=True))
    if len(h_values) < 3:
        raise AnalysisError("Convergence study needs at least three step sizes")

    if problem.exact is not None:
        reference = problem.exact(t_end)
    else:
        h_ref = h_values[-1] / 100.0
        logger.info(f"No closed form for {problem.name}; trapezoidal reference at h={h_ref:g}")
        reference = integrate_split(problem, SolverMethod.TRAPEZOIDAL, h_ref, t_end)

    scale = max(float(np.max(np.abs(reference))), np.finfo(float).tiny)
    errors = []
    for h in h_values:
        z = integrate_split(problem, method, h, t_end)
        errors.append(float(np.max(np.abs(z - reference))) / scale)
    errors = np.array(errors)

    keep = errors > NOISE_FLOOR
    excluded = [float(h) for h in h_values[~keep]]
    for h in excluded:
        logger.warning(f"Excluding h={h:g} from the fit: error at the round-off floor")
    if keep.sum() < 3:
        raise AnalysisError("Fewer than three step sizes above the round-off floor")

    h_fit, e_fit = h_values[keep], errors[keep]
    order = float(np.polyfit(np.log(h_fit), np.log(e_fit), 1)[0])
    local = np.full(len(h_values), np.nan)
    with np.errstate(divide="ignore", invalid="ignore"):
        local[1:] = np.log(errors[1:] / errors[:-1]) / np.log(h_values[1:] / h_values[:-1])

    logger.info(f"Convergence | problem={problem.name} | method={method.value} | order={order:.4f}")
    return ConvergenceResult(
        problem=problem.name,
        method=method.value,
        h=h_values,
        errors=errors,
        order=order,
        local_slopes=local,
        excluded=excluded,
    )


# ==================== WAVEFORM METRICS ====================

def _window_samples(t: np.ndarray, values: np.ndarray, window) -> tuple:
    t0, t1 = window
    inside = (t > t0) & (t < t1)
    grid = np.concatenate([[t0], t[inside], [t1]])
    return grid, np.interp(grid, t, values)


def _check_window(w: WaveformSet, window):
    t0, t1 = window
    if not t0 < t1:
        raise MetricsError(f"Window needs t0 < t1, got [{t0}, {t1}]")
    if len(w.t) == 0:
        raise MetricsError("Waveform is empty")
    slack = 1e-12 * max(1.0, abs(t1))
    if t0 < w.t[0] - slack or t1 > w.t[-1] + slack:
        raise MetricsError(
            f"Window [{t0}, {t1}] s lies outside the data [{w.t[0]}, {w.t[-1]}] s",
            {"window": [t0, t1], "data": [float(w.t[0]), float(w.t[-1])]},
        )


def _rms_peak(t: np.ndarray, v: np.ndarray) -> tuple:
    duration = t[-1] - t[0]
    rms = float(np.sqrt(trapezoid(v * v, t) / duration))
    return rms, float(np.max(np.abs(v)))


def waveform_metrics(w: WaveformSet, window) -> MetricsReport:
    window = (float(window[0]), float(window[1]))
    if w.diverged:
        return MetricsReport(window=window, valid=False, reason="waveform diverged")
    _check_window(w, window)
    metrics = {}
    for name, values in w.probes.items():
        grid, v = _window_samples(w.t, values, window)
        rms, peak = _rms_peak(grid, v)
        metrics[name] = ProbeMetrics(probe=name, rms=rms, peak=peak, window=window)
    return MetricsReport(window=window, metrics=metrics)


def _relative_error(a: float, b: float) -> float:
    if b == 0.0:
        return 0.0 if a == 0.0 else float("inf")
    return abs(a - b) / abs(b)


def compare(a: WaveformSet, b: WaveformSet, window) -> MetricsReport:
    """Metrics of a against reference b, both resampled onto b's grid inside the window."""
    window = (float(window[0]), float(window[1]))
    only_a = set(a.probes) - set(b.probes)
    only_b = set(b.probes) - set(a.probes)
    if only_a or only_b:
        raise ProbeMismatchError(list(only_a), list(only_b))
    if a.diverged or b.diverged:
        which = "a" if a.diverged else "b"
        return MetricsReport(window=window, valid=False, reason=f"waveform {which} diverged")
    _check_window(a, window)
    _check_window(b, window)

    rows = []
    for name in b.probes:
        grid, vb = _window_samples(b.t, b.probes[name], window)
        va = np.interp(grid, a.t, a.probes[name])
        rms_a, peak_a = _rms_peak(grid, va)
        rms_b, peak_b = _rms_peak(grid, vb)
        rows.append(ComparisonRow(
            probe=name,
            rms_a=rms_a,
            rms_b=rms_b,
            peak_a=peak_a,
            peak_b=peak_b,
            rel_err_rms=_relative_error(rms_a, rms_b),
            rel_err_peak=_relative_error(peak_a, peak_b),
        ))
    return MetricsReport(window=window, comparison=rows)
