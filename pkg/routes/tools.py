from typing import Annotated, List, Optional

import typer

from app.models.coupling import SyntheticTableParams
from handlers.analysis_handler import AnalysisHandler
from middleware.error_handler import handle_errors

tools_handler = AnalysisHandler()


@handle_errors
def export_matrices(
    scenario: Annotated[str, typer.Argument(help="Scenario file or name")],
    k: Annotated[Optional[List[int]], typer.Option(help="Switching-state index, repeatable")] = None,
    out: Annotated[Optional[str], typer.Option(help="Output directory")] = None,
):
    """Write [[A B1 B2]; [C D1 D2]] for the given switching states."""
    paths = tools_handler.export_matrices(scenario, k or [0], out)
    for path in paths:
        typer.echo(path)


@handle_errors
def table(
    points: Annotated[int, typer.Option(help="Number of table rows")] = 26,
    span: Annotated[float, typer.Option(help="Table length in metres")] = 2.0,
    m: Annotated[float, typer.Option("--m", help="Nominal mutual inductance in henries")] = 40e-6,
    out: Annotated[Optional[str], typer.Option(help="Output directory")] = None,
):
    """Write the synthetic transit inductance table."""
    params = SyntheticTableParams(n_points=points, coupled_span=span, M1=m, M2=m)
    typer.echo(tools_handler.table(params, out))
