import logging
import os
import time
from typing import Dict, List, Optional, Sequence

import numpy as np

from app.models.analysis import ConvergenceResult, GridSpec, SpectralSweep, StabilityGrid
from app.models.coupling import SyntheticTableParams
from app.models.manifest import RunManifest
from app.models.solver import SolverMethod
from app.models.state_space import FrozenSystem
from app.services.analysis_service import (
    DEFAULT_H_LIST,
    DEFAULT_T_END,
    PROBLEMS,
    convergence_order,
    spectral_sweep,
    stability_region,
)
from app.services.coupling_service import save_table_csv, synth_table
from app.services.scenario_service import build_stiff_test_circuit, load_scenario, prepare_scenario
from app.utils.app_error import ConfigError
from app.utils.csv_utils import write_csv_atomic
from config import app_config

logger = logging.getLogger(__name__)

STIFF_SCENARIO = "stiff"


class AnalysisHandler:
    def __init__(self, output_root: Optional[str] = None):
        self.output_root = output_root or app_config.OUTPUT_ROOT

    def _out(self, out: Optional[str], name: str) -> str:
        directory = out or os.path.join(self.output_root, name)
        os.makedirs(directory, exist_ok=True)
        return directory

    def _manifest(self, command: str, directory: str, started: float, outputs: List[str], inputs: Dict, result: Dict,
                  scenario: Optional[str] = None):
        RunManifest(
            command=command,
            scenario=scenario,
            output_dir=directory,
            solver={k: v for k, v in inputs.items() if k in ("method", "h", "backend")},
            input_hash=RunManifest.hash_inputs(inputs),
            wall_clock_s=time.perf_counter() - started,
            outputs=outputs,
            result=result,
        ).write()

    # ==================== STABILITY ====================

    def stability(self, z0: complex, grid: GridSpec, out: Optional[str] = None) -> StabilityGrid:
        started = time.perf_counter()
        result = stability_region(z0, grid)
        directory = self._out(out, "stability")
        name = "stability_grid.csv"
        header = {"method": SolverMethod.IMEX.value, "backend": "float64", "h": "scaled", "scenario_hash": "none",
                  "z0": repr(complex(z0))}
        write_csv_atomic(result.to_frame(), os.path.join(directory, name), header=header)
        stable = float(result.stable_mask(1e-12).mean())
        self._manifest("stability", directory, started, [name],
                       {"z0": repr(complex(z0)), "grid": grid.model_dump()}, {"stable_fraction": stable})
        return result

    # ==================== SPECTRAL ====================

    def frozen_system(self, scenario: str, k: int = 0, position: Optional[float] = None) -> FrozenSystem:
        if scenario == STIFF_SCENARIO:
            return build_stiff_test_circuit()
        system = prepare_scenario(load_scenario(scenario))
        if system.coupling is None:
            minv = np.zeros((0, 0))
        else:
            x_pos = system.coupling.position_at(0.0) if position is None else position
            minv = system.coupling.minv_at(x_pos)
        return system.bank.frozen_system(k, minv)

    def spectral(
        self,
        scenario: str,
        method: SolverMethod,
        h_values: Sequence[float],
        out: Optional[str] = None,
        k: int = 0,
    ) -> SpectralSweep:
        started = time.perf_counter()
        frozen = self.frozen_system(scenario, k)
        sweep = spectral_sweep(frozen, method, h_values)
        sweep.switching_state = k
        directory = self._out(out, f"spectral_{method.value}")
        name = "spectral_radius.csv"
        inputs = {"scenario": scenario, "method": method.value, "backend": "float64", "k": k,
                  "h": [float(h) for h in h_values]}
        header = {"method": method.value, "backend": "float64", "h": "sweep", "scenario": scenario, "k": k,
                  "scenario_hash": RunManifest.hash_inputs(inputs)}
        write_csv_atomic(sweep.to_frame(), os.path.join(directory, name), header=header)
        self._manifest("spectral", directory, started, [name], inputs,
                       {"max_rho": float(sweep.rho.max()), "min_rho": float(sweep.rho.min())}, scenario=scenario)
        return sweep

    # ==================== CONVERGENCE ====================

    def convergence(
        self,
        problem: str,
        method: SolverMethod,
        h_list: Sequence[float] = DEFAULT_H_LIST,
        out: Optional[str] = None,
        t_end: float = DEFAULT_T_END,
    ) -> ConvergenceResult:
        builder = PROBLEMS.get(problem)
        if builder is None:
            raise ConfigError(f"Unknown problem '{problem}'. Available: {', '.join(PROBLEMS)}")
        started = time.perf_counter()
        result = convergence_order(builder(), method, h_list, t_end)
        directory = self._out(out, f"convergence_{problem}_{method.value}")
        name = "convergence.csv"
        inputs = {"problem": problem, "method": method.value, "backend": "float64",
                  "h": [float(h) for h in h_list], "t_end": t_end}
        header = {"method": method.value, "backend": "float64", "h": "sweep", "problem": problem,
                  "scenario_hash": RunManifest.hash_inputs(inputs), "order": repr(result.order)}
        write_csv_atomic(result.to_frame(), os.path.join(directory, name), header=header)
        self._manifest("convergence", directory, started, [name], inputs,
                       {"order": result.order, "excluded": result.excluded})
        return result

    # ==================== EXPORTS ====================

    def export_matrices(self, scenario: str, states: Sequence[int], out: Optional[str] = None) -> List[str]:
        started = time.perf_counter()
        system = prepare_scenario(load_scenario(scenario))
        directory = self._out(out, "matrices")
        paths = [system.bank.export_csv(k, directory) for k in states]
        self._manifest("export-matrices", directory, started, [os.path.basename(p) for p in paths],
                       {"scenario_hash": system.scenario_hash, "k": list(states)},
                       {"state_labels": system.bank.state_labels}, scenario=scenario)
        return paths

    def table(self, params: SyntheticTableParams, out: Optional[str] = None) -> str:
        started = time.perf_counter()
        table = synth_table(params)
        directory = self._out(out, "tables")
        name = "inductance_table.csv"
        save_table_csv(table, os.path.join(directory, name))
        self._manifest("table", directory, started, [name], params.model_dump(),
                       {"rows": len(table), "span": list(table.span)})
        return os.path.join(directory, name)
