"""Structured exceptions and the command-line error handler."""

import logging
import sys
from typing import Optional

from skillfocus.models.schemas import ErrorResponse

logger = logging.getLogger(__name__)


class SkillFocusError(Exception):
    """Base error with a machine-readable code and optional details."""

    def __init__(
        self,
        message: str,
        error_code: str = "UNKNOWN_ERROR",
        details: Optional[dict] = None,
    ):
        self.message = message
        self.error_code = error_code
        self.details = details
        super().__init__(self.message)

    def to_response(self) -> ErrorResponse:
        return ErrorResponse(message=self.message, error_code=self.error_code, details=self.details)


class ShapeMismatchError(SkillFocusError):
    """Operand shapes are incompatible."""

    def __init__(self, message: str = "Shape mismatch", details: Optional[dict] = None):
        super().__init__(message, "SHAPE_MISMATCH", details)


class GraphStateError(SkillFocusError):
    """A tape was used out of order (e.g. backward before forward)."""

    def __init__(self, message: str = "Invalid graph state", details: Optional[dict] = None):
        super().__init__(message, "GRAPH_STATE", details)


class NonFiniteError(SkillFocusError):
    """An observation, parameter or gradient contains NaN or Inf."""

    def __init__(self, message: str = "Non-finite value", details: Optional[dict] = None):
        super().__init__(message, "NON_FINITE", details)


class NonFiniteLossError(SkillFocusError):
    """The training loss became non-finite; details carry the update statistics."""

    def __init__(self, message: str = "Non-finite loss", details: Optional[dict] = None):
        super().__init__(message, "NON_FINITE_LOSS", details)


class PrivilegedFieldError(SkillFocusError):
    """The critic was given an actor observation without privileged fields."""

    def __init__(
        self, message: str = "Privileged state fields missing", details: Optional[dict] = None
    ):
        super().__init__(message, "PRIVILEGED_FIELDS_MISSING", details)


class HistoryWindowError(SkillFocusError):
    """The estimator history window is shorter than configured."""

    def __init__(self, message: str = "Observation history too short", details: Optional[dict] = None):
        super().__init__(message, "HISTORY_TOO_SHORT", details)


class MissingRecordError(SkillFocusError):
    """An old-policy record lacks fields needed for the importance ratio."""

    def __init__(self, message: str = "Old policy record incomplete", details: Optional[dict] = None):
        super().__init__(message, "MISSING_OLD_RECORD", details)


class CurriculumError(SkillFocusError):
    """A curriculum operation received an inconsistent grid or outcome."""

    def __init__(self, message: str = "Curriculum error", details: Optional[dict] = None):
        super().__init__(message, "CURRICULUM_ERROR", details)


class ConfigError(SkillFocusError):
    """Configuration could not be loaded or validated."""

    def __init__(self, message: str = "Invalid configuration", details: Optional[dict] = None):
        super().__init__(message, "CONFIG_INVALID", details)


class ConfigMismatchError(SkillFocusError):
    """A checkpoint was produced under a configuration incompatible with the current one."""

    def __init__(self, field: str, expected, found):
        super().__init__(
            f"Checkpoint/config mismatch on field '{field}'",
            "CONFIG_MISMATCH",
            {"field": field, "checkpoint": expected, "config": found},
        )
        self.field = field


class OutputDirectoryError(SkillFocusError):
    """The output directory cannot be created or written."""

    def __init__(self, message: str = "Output directory not writable", details: Optional[dict] = None):
        super().__init__(message, "OUTPUT_UNWRITABLE", details)


class CheckpointError(SkillFocusError):
    """Base class for checkpoint read/write failures."""


class CheckpointVersionError(CheckpointError):
    def __init__(self, found, expected):
        super().__init__(
            f"Unsupported checkpoint format version {found} (expected {expected})",
            "CHECKPOINT_VERSION",
            {"found": found, "expected": expected},
        )


class CorruptCheckpointError(CheckpointError):
    def __init__(self, message: str = "Corrupt checkpoint", details: Optional[dict] = None):
        super().__init__(message, "CHECKPOINT_CORRUPT", details)


class CheckpointShapeError(CheckpointError):
    def __init__(self, name: str, expected, found):
        super().__init__(
            f"Array '{name}' has shape {found}, expected {expected}",
            "CHECKPOINT_SHAPE",
            {"name": name, "expected": list(expected), "found": list(found)},
        )


def handle_cli_error(exc: BaseException) -> int:
    """Render an exception raised by a command and return the process exit status."""
    if isinstance(exc, SkillFocusError):
        logger.warning(f"{exc.error_code} - {exc.message}", extra={"details": exc.details})
        payload = exc.to_response()
        status = 2
    else:
        # Full traceback goes to the log, the user only sees a generic message
        logger.error(f"Unhandled exception: {type(exc).__name__}: {exc}", exc_info=exc)
        payload = ErrorResponse(message="An unexpected error occurred", error_code="INTERNAL_ERROR")
        status = 1
    print(payload.model_dump_json(), file=sys.stderr)
    return status
