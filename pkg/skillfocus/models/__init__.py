"""Pydantic models for files written and read by the trainer."""

from .schemas import (
    ArraySpec,
    CheckpointHeader,
    ErrorResponse,
    EvaluationSummary,
    MetricsRecord,
    RunHeader,
    TimingRecord,
    TrajectoryRecord,
)

__all__ = [
    "ArraySpec",
    "CheckpointHeader",
    "ErrorResponse",
    "EvaluationSummary",
    "MetricsRecord",
    "RunHeader",
    "TimingRecord",
    "TrajectoryRecord",
]
