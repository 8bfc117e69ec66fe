"""Exception hierarchy shared by the whole package.

Every error raised on purpose by rexl derives from `RexlError`, so callers
(and the CLI) can tell engine failures apart from bugs.
"""

from __future__ import annotations

from typing import Any, Dict, Optional


EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_TRANSPORT = 3
EXIT_TRAINING = 4


class RexlError(Exception):
    """Base class for all rexl errors."""


class ContractViolation(RexlError, ValueError):
    """A precondition of an operation does not hold."""


class ScoreValidationError(ContractViolation):
    """A classifier returned scores outside the ClassScores invariants."""


class ConfigError(RexlError, ValueError):
    """Invalid run or module configuration."""


class TransportError(RexlError):
    """Communication with an external classifier process failed."""


class TransportTimeout(TransportError):
    """The classifier process did not answer in time."""


class ProtocolError(TransportError):
    """The classifier process sent something the wire protocol forbids."""


class ProcessExited(TransportError):
    """The classifier process is no longer running."""


class FormatError(RexlError):
    """A persisted artifact is corrupt or truncated."""


class FormatVersionError(FormatError):
    """A persisted artifact carries an unexpected format string."""


class TrainingError(RexlError):
    """Training diverged or failed to converge."""

    def __init__(self, message: str, diagnostics: Optional[Dict[str, Any]] = None):
        super().__init__(message)
        self.diagnostics = dict(diagnostics or {})


def exit_code_for(exc: BaseException) -> int:
    """Map an exception onto the CLI exit code contract."""
    if isinstance(exc, TransportError):
        return EXIT_TRANSPORT
    if isinstance(exc, TrainingError):
        return EXIT_TRAINING
    if isinstance(exc, (ConfigError, ContractViolation, FormatError, FileNotFoundError)):
        return EXIT_CONFIG
    return 1
