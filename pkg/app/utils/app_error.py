from typing import Any, Dict, List, Optional


class AppError(Exception):
    """Base error for the simulator. Carries a message and structured details."""

    def __init__(self, message: str, details: Optional[Dict[str, Any]] = None):
        super().__init__(message)
        self.message = message
        self.details = details or {}

    def to_dict(self) -> Dict[str, Any]:
        return {"error": type(self).__name__, "message": self.message, **self.details}

    def __str__(self) -> str:
        if not self.details:
            return self.message
        extra = ", ".join(f"{key}={value}" for key, value in self.details.items())
        return f"{self.message} ({extra})"


# ==================== CONFIGURATION ====================

class ConfigError(AppError):
    """Invalid scenario, solver settings or CLI usage."""


class NetlistError(ConfigError):
    def __init__(self, message: str, nodes: Optional[List[str]] = None, elements: Optional[List[str]] = None):
        super().__init__(message, {"nodes": nodes or [], "elements": elements or []})
        self.nodes = nodes or []
        self.elements = elements or []


class SingularSystemError(NetlistError):
    """MNA matrix is singular for a switching state."""


class DimensionError(AppError):
    def __init__(self, message: str, expected: Any = None, got: Any = None):
        super().__init__(message, {"expected": expected, "got": got})


# ==================== COUPLING ====================

class TableError(ConfigError):
    """Inductance table failed validation or could not be parsed."""


class SingularCouplingError(AppError):
    def __init__(self, denominator: float):
        super().__init__("Inductance matrix is singular", {"denominator": denominator})
        self.denominator = denominator


# ==================== SOLVERS ====================

class SolverError(AppError):
    pass


class SingularStepMatrixError(SolverError):
    def __init__(self, k: int, h: float):
        super().__init__("Implicit step matrix is singular", {"k": k, "h": h})
        self.k = k


class DivergenceError(SolverError):
    def __init__(self, t: float, variable: str, value: float):
        super().__init__("Simulation diverged", {"t": t, "variable": variable, "value": value})
        self.t = t
        self.variable = variable
        self.value = value


class NewtonConvergenceError(SolverError):
    def __init__(self, t: float, residuals: List[float]):
        super().__init__("Newton iteration did not converge", {"t": t, "iterations": len(residuals)})
        self.t = t
        self.residuals = residuals


# ==================== ANALYSIS ====================

class AnalysisError(AppError):
    pass


class PoleError(AnalysisError):
    def __init__(self, z1: complex):
        super().__init__("Amplification factor has a pole at z1 = 2", {"z1": z1})


class MetricsError(AnalysisError):
    pass


class ProbeMismatchError(AnalysisError):
    def __init__(self, only_a: List[str], only_b: List[str]):
        super().__init__(
            "Probe sets differ",
            {"only_in_a": sorted(only_a), "only_in_b": sorted(only_b)},
        )
        self.only_a = sorted(only_a)
        self.only_b = sorted(only_b)


class ToleranceExceededError(AnalysisError):
    def __init__(self, probes: List[str], tolerance: float):
        super().__init__("Relative error above tolerance", {"probes": probes, "tolerance": tolerance})
        self.probes = probes
