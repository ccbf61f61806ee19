from typing import List

from pydantic_settings import BaseSettings, SettingsConfigDict


class SolverSettings(BaseSettings):
    """Numerical defaults, overridable through WPTSIM_* environment variables or .env."""

    model_config = SettingsConfigDict(env_prefix="WPTSIM_", env_file=".env", extra="ignore")

    # Binary-resistor device model
    SWITCH_R_ON: float = 1e-3
    SWITCH_R_OFF: float = 1e6
    # Diodes switch only once past these margins; they sit above fixed-point output noise
    DIODE_V_THRESHOLD: float = 1e-3
    DIODE_I_THRESHOLD: float = 1e-3

    # Stepping
    DEFAULT_STEP: float = 75e-9
    NEWTON_MAX_ITER: int = 50
    NEWTON_TOL: float = 1e-12

    # Divergence criterion
    DIVERGENCE_FACTOR: float = 1e6
    DIVERGENCE_LIMIT: float = 1e9

    # Coupling table validation
    SPD_SWEEP_POINTS: int = 1000

    @classmethod
    def validate_config(cls, settings: "SolverSettings") -> dict:
        errors: List[str] = []
        warnings: List[str] = []

        if settings.SWITCH_R_ON <= 0:
            errors.append("SWITCH_R_ON must be positive")
        if settings.SWITCH_R_OFF <= settings.SWITCH_R_ON:
            errors.append("SWITCH_R_OFF must exceed SWITCH_R_ON")
        if settings.DEFAULT_STEP <= 0:
            errors.append("DEFAULT_STEP must be positive")
        if settings.DIODE_V_THRESHOLD < 0 or settings.DIODE_I_THRESHOLD < 0:
            errors.append("Diode thresholds must be non-negative")
        if settings.NEWTON_MAX_ITER < 1:
            errors.append("NEWTON_MAX_ITER must be at least 1")
        if settings.DIVERGENCE_FACTOR <= 1:
            errors.append("DIVERGENCE_FACTOR must exceed 1")
        if settings.SWITCH_R_OFF / settings.SWITCH_R_ON > 1e12:
            warnings.append("r_off/r_on ratio above 1e12 makes MNA solves poorly conditioned")
        if settings.SPD_SWEEP_POINTS < 100:
            warnings.append("SPD sweep below 100 points may miss non-SPD segments")

        if errors:
            raise ValueError(f"Solver configuration errors: {', '.join(errors)}")

        return {"valid": True, "warnings": warnings}


solver_settings = SolverSettings()
