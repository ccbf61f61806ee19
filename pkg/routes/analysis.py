from typing import Annotated, Optional

import typer

from app.models.analysis import GridSpec
from app.models.solver import SolverMethod
from app.services.analysis_service import DEFAULT_H_LIST, DEFAULT_T_END, parse_sweep
from handlers.analysis_handler import AnalysisHandler
from middleware.error_handler import handle_errors

analysis_handler = AnalysisHandler()


def parse_complex(text: str) -> complex:
    """Accepts 1-2j as well as 1-2i."""
    return complex(text.strip().replace(" ", "").replace("i", "j"))


@handle_errors
def stability(
    z0: Annotated[str, typer.Option(help="Explicit-part scaled eigenvalue h*l0, e.g. -1+0i")] = "0",
    grid: Annotated[str, typer.Option(help="re_min:re_max:im_min:im_max:n[:n_im]")] = "-10:10:-10:10:201",
    out: Annotated[Optional[str], typer.Option(help="Output directory")] = None,
):
    """|R(z0, z1)| over a z1 grid."""
    result = analysis_handler.stability(parse_complex(z0), GridSpec.parse(grid), out)
    stable = float(result.stable_mask(1e-12).mean())
    typer.echo(f"z0={result.z0} | stable fraction {stable:.4f} | poles {int(result.poles.sum())}")


@handle_errors
def spectral(
    scenario: Annotated[str, typer.Option(help="'stiff' or a scenario")] = "stiff",
    method: Annotated[SolverMethod, typer.Option(help="Integration method")] = SolverMethod.IMEX,
    h_sweep: Annotated[str, typer.Option("--h-sweep", help="start:stop:step in seconds")] = "10e-9:200e-9:10e-9",
    k: Annotated[int, typer.Option(help="Switching-state index")] = 0,
    out: Annotated[Optional[str], typer.Option(help="Output directory")] = None,
):
    """Spectral radius of the one-step matrix across step sizes."""
    sweep = analysis_handler.spectral(scenario, method, parse_sweep(h_sweep), out, k)
    typer.echo(f"{method.value} | {len(sweep.h)} step sizes | max rho {sweep.rho.max():.9g} | min rho {sweep.rho.min():.9g}")


@handle_errors
def convergence(
    problem: Annotated[str, typer.Option(help="decay or cubic")] = "cubic",
    method: Annotated[SolverMethod, typer.Option(help="Integration method")] = SolverMethod.IMEX,
    h_list: Annotated[Optional[str], typer.Option("--h-list", help="Comma-separated step sizes")] = None,
    t_end: Annotated[float, typer.Option("--t-end")] = DEFAULT_T_END,
    out: Annotated[Optional[str], typer.Option(help="Output directory")] = None,
):
    """Fitted global order of accuracy."""
    h_values = [float(h) for h in h_list.split(",")] if h_list else list(DEFAULT_H_LIST)
    result = analysis_handler.convergence(problem, method, h_values, out, t_end)
    typer.echo(f"{problem} | {method.value} | fitted order p={result.order:.4f}")
