import logging

import typer

from app.config.solver_config import SolverSettings, solver_settings
from config import ENV, app_config
from middleware.error_handler import handle_errors
from routes import register_commands

# Configure logging
logging.basicConfig(
    level=app_config.LOG_LEVEL,
    format='%(asctime)s - %(name)s - %(levelname)s - %(message)s'
)
logger = logging.getLogger(__name__)

# Application metadata
APP_NAME = app_config.APP_NAME
APP_VERSION = app_config.APP_VERSION
APP_DESCRIPTION = """
Fixed-step simulator for switched power-electronic circuits with nonlinear magnetic coupling.

Runs scenarios with the IMEX, latency, forward-Euler or trapezoidal-oracle methods on a
float64 or fixed-point backend, and provides stability, spectral and convergence analyses.
"""

app = typer.Typer(name=APP_NAME, help=APP_DESCRIPTION, no_args_is_help=True, add_completion=False)


def _version(value: bool):
    if value:
        typer.echo(f"{APP_NAME} {APP_VERSION}")
        raise typer.Exit()


@app.callback()
@handle_errors
def main(
    version: bool = typer.Option(False, "--version", callback=_version, is_eager=True, help="Show the version and exit"),
):
    logger.debug(f"{APP_NAME} v{APP_VERSION} in {ENV} mode")
    for warning in SolverSettings.validate_config(solver_settings)["warnings"]:
        logger.warning(warning)


register_commands(app)

if __name__ == "__main__":
    app()
