import functools
import logging
from enum import IntEnum
from typing import Callable

import typer
from pydantic import ValidationError

from app.utils.app_error import (
    AppError,
    ConfigError,
    DivergenceError,
    MetricsError,
    ProbeMismatchError,
    ToleranceExceededError,
)

logger = logging.getLogger(__name__)


class ExitCode(IntEnum):
    OK = 0
    UNEXPECTED = 1
    CONFIG = 2
    DIVERGED = 3
    TOLERANCE = 4


def exit_code_for(exc: BaseException) -> ExitCode:
    if isinstance(exc, DivergenceError):
        return ExitCode.DIVERGED
    if isinstance(exc, ToleranceExceededError):
        return ExitCode.TOLERANCE
    if isinstance(exc, (ConfigError, ProbeMismatchError, MetricsError, ValidationError, ValueError, KeyError)):
        return ExitCode.CONFIG
    return ExitCode.UNEXPECTED


def handle_errors(command: Callable) -> Callable:
    """Run a CLI command, mapping exceptions to exit codes and a one-line message on stderr."""

    @functools.wraps(command)
    def wrapper(*args, **kwargs):
        try:
            return command(*args, **kwargs)
        except typer.Exit:
            raise
        except AppError as e:
            code = exit_code_for(e)
            logger.error(f"{type(e).__name__}: {e}")
            typer.echo(f"Error: {e}", err=True)
            raise typer.Exit(code=int(code))
        except (ValidationError, ValueError, KeyError) as e:
            logger.error(f"Invalid input: {e}")
            typer.echo(f"Error: {e}", err=True)
            raise typer.Exit(code=int(ExitCode.CONFIG))
        except Exception as e:
            logger.error(f"Unhandled exception: {e}", exc_info=True)
            typer.echo(f"Unexpected error: {e}", err=True)
            raise typer.Exit(code=int(ExitCode.UNEXPECTED))

    return wrapper
