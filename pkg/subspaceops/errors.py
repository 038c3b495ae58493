"""Exception hierarchy and process exit codes."""
from typing import Sequence

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NOT_CONVERGED = 3


class SubspaceOpsError(Exception):
    """Base class for every error raised by the package."""


class ConfigError(SubspaceOpsError, ValueError):
    """Invalid configuration, flags or run request."""


class DataError(SubspaceOpsError, ValueError):
    """Malformed, inconsistent or unreadable data."""


class DegenerateAffinityError(DataError):
    """The affinity graph has no edges, so no embedding can be computed."""


class UnassignableError(DataError):
    """Every class residual of a point is +infinity."""

    def __init__(self, message: str, columns: Sequence[int] = ()):
        super().__init__(message)
        self.columns = list(columns)


class ConvergenceError(SubspaceOpsError, RuntimeError):
    """A solver stopped at max_iterations without meeting its tolerance."""


def with_stage(stage: str, exc: Exception) -> Exception:
    """Return a copy of ``exc`` whose message names the pipeline stage."""
    message = f"[{stage}] {exc}"
    if isinstance(exc, UnassignableError):
        return UnassignableError(message, exc.columns)
    try:
        return type(exc)(message)
    except TypeError:
        return DataError(message)


def exit_code_for(exc: BaseException) -> int:
    """Map an exception to the CLI exit code."""
    if isinstance(exc, ConvergenceError):
        return EXIT_NOT_CONVERGED
    if isinstance(exc, ConfigError):
        return EXIT_USAGE
    # DataError, OSError and anything unexpected count as data failures
    return EXIT_DATA
