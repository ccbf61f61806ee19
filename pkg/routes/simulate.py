from typing import Annotated, Optional

import typer

from app.models.solver import SolverMethod
from handlers.simulate_handler import SimulateHandler
from middleware.error_handler import ExitCode, handle_errors

simulate_handler = SimulateHandler()


@handle_errors
def simulate(
    scenario: Annotated[str, typer.Argument(help="Scenario file, name under the scenario directory, or built-in name")],
    method: Annotated[Optional[SolverMethod], typer.Option(help="Integration method")] = None,
    h: Annotated[Optional[float], typer.Option("--h", help="Step size in seconds")] = None,
    backend: Annotated[Optional[str], typer.Option(help="float64 or fixed:<total_bits>:<integer_bits>")] = None,
    t_end: Annotated[Optional[float], typer.Option("--t-end", help="Simulated time in seconds")] = None,
    out: Annotated[Optional[str], typer.Option(help="Output directory")] = None,
    decimation: Annotated[Optional[int], typer.Option(help="Record every n-th step")] = None,
    energy_audit: Annotated[bool, typer.Option("--energy-audit", help="Track the energy balance of the run")] = False,
):
    """Run a scenario and write waveforms.csv plus manifest.json."""
    outcome = simulate_handler.simulate(scenario, method, h, backend, t_end, out, decimation, energy_audit)
    waveforms = outcome.waveforms
    if outcome.diverged:
        typer.echo(
            f"Diverged at t={waveforms.metadata.get('diverged_at')} s "
            f"({waveforms.metadata.get('divergence_reason', '')}); partial waveform in {outcome.output_dir}"
        )
        raise typer.Exit(code=int(ExitCode.DIVERGED))
    typer.echo(f"{len(waveforms)} samples x {len(waveforms.probes)} probes written to {outcome.output_dir}")
