import logging
import os
import time
from dataclasses import dataclass
from typing import Optional

from app.models.manifest import RunManifest
from app.models.solver import SolverConfig, SolverMethod
from app.models.waveforms import WaveformSet
from app.services.scenario_service import load_scenario, prepare_scenario
from app.services.solver_service import run
from app.utils.csv_utils import write_text_atomic
from config import app_config

logger = logging.getLogger(__name__)


@dataclass
class SimulationOutcome:
    waveforms: WaveformSet
    output_dir: str
    manifest: RunManifest

    @property
    def diverged(self) -> bool:
        return self.waveforms.diverged


class SimulateHandler:
    def __init__(self, output_root: Optional[str] = None):
        self.output_root = output_root or app_config.OUTPUT_ROOT

    def default_output_dir(self, scenario: str, solver: SolverConfig) -> str:
        tag = solver.backend_tag.replace(":", "-")
        name = os.path.splitext(os.path.basename(scenario))[0]
        return os.path.join(self.output_root, f"{name}_{solver.method.value}_{tag}")

    def simulate(
        self,
        scenario: str,
        method: Optional[SolverMethod] = None,
        h: Optional[float] = None,
        backend: Optional[str] = None,
        t_end: Optional[float] = None,
        out: Optional[str] = None,
        decimation: Optional[int] = None,
        energy_audit: bool = False,
    ) -> SimulationOutcome:
        """Run one scenario and write waveforms, manifest and (if needed) the divergence marker."""
        started = time.perf_counter()
        config = load_scenario(scenario)

        updates = config.solver.model_dump()
        if method is not None:
            updates["method"] = method
        if h is not None:
            updates["h"] = h
        if decimation is not None:
            updates["decimation"] = decimation
        if backend is not None:
            updates.update(SolverConfig.parse_backend(backend))
        solver = SolverConfig(**updates)
        t_end = config.t_end if t_end is None else t_end

        system = prepare_scenario(config, solver)
        waveforms = run(system, solver, t_end, energy_audit=energy_audit)
        waveforms.metadata["t_end"] = repr(t_end)

        output_dir = out or self.default_output_dir(scenario, solver)
        os.makedirs(output_dir, exist_ok=True)
        waveform_path = os.path.join(output_dir, app_config.WAVEFORM_FILE)
        marker_path = os.path.join(output_dir, app_config.DIVERGED_MARKER)
        waveforms.write_csv(waveform_path)

        outputs = [app_config.WAVEFORM_FILE]
        if waveforms.diverged:
            reason = waveforms.metadata.get("divergence_reason", "")
            write_text_atomic(f"t={waveforms.metadata.get('diverged_at')}\n{reason}\n", marker_path)
            outputs.append(app_config.DIVERGED_MARKER)
        elif os.path.exists(marker_path):
            os.remove(marker_path)

        manifest = RunManifest(
            command="simulate",
            scenario=scenario,
            solver=solver.model_dump(mode="json"),
            output_dir=output_dir,
            input_hash=RunManifest.hash_inputs(system.scenario_hash, solver.model_dump(mode="json"), t_end),
            wall_clock_s=time.perf_counter() - started,
            outputs=outputs,
            result={
                "samples": len(waveforms),
                "diverged": waveforms.diverged,
                "diverged_at": waveforms.metadata.get("diverged_at"),
                "saturation_count": waveforms.metadata.get("saturation_count", 0),
                "switching_states": waveforms.metadata.get("switching_states"),
                **{key: value for key, value in waveforms.metadata.items() if key.startswith("energy_")},
            },
        )
        manifest.write()
        logger.info(f"Simulation written to {output_dir} | samples={len(waveforms)} | diverged={waveforms.diverged}")
        return SimulationOutcome(waveforms=waveforms, output_dir=output_dir, manifest=manifest)
