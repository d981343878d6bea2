"""Pydantic models for files written and read by the trainer."""

from typing import Any, Dict, List, Literal, Optional

from pydantic import BaseModel, Field


class ErrorResponse(BaseModel):
    """Standard error payload printed by the command line on failure."""

    message: str = Field(..., description="Human-readable error message")
    error_code: str = Field(..., description="Machine-readable error code")
    details: Optional[dict] = Field(None, description="Additional error details")


class ArraySpec(BaseModel):
    """Location of one float64 array inside a checkpoint payload."""

    name: str
    shape: List[int]
    offset: int = Field(..., ge=0, description="Byte offset into the payload")
    count: int = Field(..., ge=0, description="Number of float64 elements")


class CheckpointHeader(BaseModel):
    """Metadata block at the head of a checkpoint file."""

    format_version: int
    package_version: str
    config_hash: str
    config: Dict[str, Any]
    iteration: int = Field(..., ge=0, description="Number of completed training iterations")
    arrays: List[ArraySpec]
    payload_bytes: int = Field(..., ge=0)
    optimizer: Dict[str, Any] = Field(default_factory=dict, description="Adam scalars for the policy update")
    estimator_optimizer: Dict[str, Any] = Field(default_factory=dict)
    curriculum: Dict[str, Any] = Field(default_factory=dict, description="Grid thresholds and extents")
    rng_states: Dict[str, Any] = Field(default_factory=dict)
    estimator_frozen: bool = Field(False, description="Estimator pre-training has finished")


class RunHeader(BaseModel):
    """First line of a metrics log."""

    kind: Literal["header"] = "header"
    package_version: str
    config_hash: str
    algorithm: str
    seed: int
    config: Dict[str, Any]


class MetricsRecord(BaseModel):
    """One line of the metrics log per training iteration."""

    kind: Literal["iteration"] = "iteration"
    iteration: int
    episodes: int = Field(..., description="Episodes completed during this iteration")
    mean_reward: Optional[float] = Field(None, description="Mean total reward per completed episode")
    mean_episode_length: Optional[float] = Field(None, description="Mean length of completed episodes")
    surrogate_loss: float
    value_loss: float
    entropy: float
    clip_fraction: float
    mean_ratio: float
    grad_norm: float
    skill_usage: List[float]
    unlocked_command_fraction: float
    unlocked_difficulty_fraction: float
    estimator_mse: float


class TimingRecord(BaseModel):
    """Wall-clock timings, kept apart from the metrics log so that log stays reproducible."""

    iteration: int
    wall_clock: float
    collect_seconds: float
    update_seconds: float


class TrajectoryRecord(BaseModel):
    """One high-level step of an evaluation episode."""

    episode: int
    t: int
    zone: str
    p: List[float]
    psi: float
    b: List[float]
    vb: List[float]
    d: int = Field(..., description="Executed skill, 1-based")
    c: List[float]
    reward: float
    reward_terms: Dict[str, float]


class EvaluationSummary(BaseModel):
    """Result of evaluating a checkpoint."""

    checkpoint: str
    episodes: int
    deterministic: bool
    seed: int
    no_data: bool = False
    mean_reward: Optional[float] = None
    mean_episode_length: Optional[float] = None
    terrains: List[str] = Field(default_factory=list)
    skill_usage: List[Optional[List[float]]] = Field(
        default_factory=list, description="Per terrain row of skill frequencies, null when absent"
    )
    skill_steps: List[int] = Field(default_factory=list, description="Steps observed per terrain")
    completion_fraction: Dict[str, Optional[float]] = Field(default_factory=dict)
    traversal_fraction: Dict[str, Optional[float]] = Field(default_factory=dict)
    mean_ball_speed: Dict[str, Optional[float]] = Field(default_factory=dict)
    mean_heading_error: Dict[str, Optional[float]] = Field(default_factory=dict)
