from typing import Annotated, Optional, Tuple

import typer

from app.utils.app_error import ToleranceExceededError
from handlers.compare_handler import CompareHandler, parse_tolerance
from middleware.error_handler import handle_errors

compare_handler = CompareHandler()


@handle_errors
def compare(
    run_a: Annotated[str, typer.Argument(help="Run directory or waveform CSV under test")],
    run_b: Annotated[str, typer.Argument(help="Reference run directory or waveform CSV")],
    window: Annotated[Tuple[float, float], typer.Option(help="Steady-state window t0 t1 in seconds")],
    tolerance: Annotated[Optional[str], typer.Option(help="Maximum relative error, e.g. 2% or 0.02")] = None,
    out: Annotated[Optional[str], typer.Option(help="Output directory")] = None,
):
    """Per-probe RMS, peak and relative errors of RUN_A against RUN_B."""
    limit = parse_tolerance(tolerance)
    report = compare_handler.compare(run_a, run_b, window, limit, out)
    frame = report.to_frame()
    typer.echo(frame.to_string(index=False, float_format=lambda v: f"{v:.6g}"))
    if limit is not None:
        exceeding = report.exceeding(limit)
        if exceeding:
            typer.echo(f"Above tolerance {limit:.4%}: {', '.join(exceeding)}")
            raise ToleranceExceededError(exceeding, limit)
        typer.echo(f"All probes within {limit:.4%}")
