"""Exception hierarchy shared across the package.

Exit-code mapping used by the CLI: configuration problems exit with 1,
input-data problems with 2, everything else (including violated internal
invariants) with 3.
"""

from __future__ import annotations


class CsrPipeError(Exception):
    """Base class for every error raised by this package."""

    exit_code = 3


class ConfigError(CsrPipeError):
    """Invalid configuration, detected before any data is processed."""

    exit_code = 1


class DataError(CsrPipeError):
    """Input data is unusable beyond the tolerated reject threshold."""

    exit_code = 2


class PipelineError(CsrPipeError):
    """A pipeline phase failed at runtime (external scorer, caps, I/O)."""

    exit_code = 3


class InternalError(CsrPipeError):
    """An internal invariant was violated; indicates a bug, not bad input."""

    exit_code = 3
