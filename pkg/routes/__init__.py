import typer

from .analysis import convergence, spectral, stability
from .compare import compare
from .simulate import simulate
from .tools import export_matrices, table


def register_commands(app: typer.Typer):
    """Attach every command to the CLI app."""
    app.command("simulate")(simulate)
    app.command("compare")(compare)
    app.command("stability")(stability)
    app.command("spectral")(spectral)
    app.command("convergence")(convergence)
    app.command("export-matrices")(export_matrices)
    app.command("table")(table)
