"""High-level reward terms for the dribbling task."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Dict, Sequence

import numpy as np

from skillfocus.config import RewardConfig

TERMS = (
    "robot_ball_distance",
    "yaw_alignment",
    "consistent_skill_index",
    "change_skill_index",
    "ball_velocity_norm",
    "ball_velocity_angle",
    "ball_velocity_error",
    "dribbling_near_ball",
)


def wrap_angle(angle):
    """Wrap to (-π, π]."""
    return math.pi - np.mod(math.pi - angle, 2.0 * math.pi)


def heading_of(vector: np.ndarray) -> float:
    return math.atan2(float(vector[1]), float(vector[0]))


@dataclass
class RewardBreakdown:
    """Unweighted value of every reward term plus the weighted total."""

    robot_ball_distance: float
    yaw_alignment: float
    consistent_skill_index: float
    change_skill_index: float
    ball_velocity_norm: float
    ball_velocity_angle: float
    ball_velocity_error: float
    dribbling_near_ball: float
    total: float = 0.0

    def terms(self) -> Dict[str, float]:
        values = asdict(self)
        values.pop("total")
        return values

    def weighted(self, weights: Dict[str, float]) -> Dict[str, float]:
        return {name: weights.get(name, 0.0) * value for name, value in self.terms().items()}


def consistent_count(skill_history: Sequence[int], window: int) -> int:
    """Number of unchanged skill indices over the last ``window`` comparisons."""
    recent = list(skill_history)[-(window + 1):]
    return sum(1 for a, b in zip(recent[:-1], recent[1:]) if a == b)


def compute_reward(
    robot_pos: np.ndarray,
    heading: float,
    ball_pos: np.ndarray,
    ball_vel: np.ndarray,
    user_command: np.ndarray,
    skill_history: Sequence[int],
    is_dribble: bool,
    config: RewardConfig,
) -> RewardBreakdown:
    """Evaluate every term from the post-step state.

    ``skill_history`` ends with the skill executed this step; a history of one
    entry (the first step) carries no switch penalty.
    """
    rel = np.asarray(ball_pos) - np.asarray(robot_pos)
    dist_sq = float(rel @ rel)
    bearing = heading_of(rel)
    command = np.asarray(user_command, dtype=np.float64)
    ball_vel = np.asarray(ball_vel, dtype=np.float64)

    e_command = wrap_angle(bearing - heading_of(command))
    e_base = wrap_angle(bearing - heading)
    angle_error = wrap_angle(heading_of(ball_vel) - heading_of(command))
    speed_gap = float(np.linalg.norm(command) - np.linalg.norm(ball_vel))
    velocity_gap = ball_vel - command

    history = list(skill_history)
    switched = len(history) >= 2 and history[-1] != history[-2]
    breakdown = RewardBreakdown(
        robot_ball_distance=math.exp(-config.delta_p * dist_sq),
        yaw_alignment=math.exp(-config.delta_psi * (e_command**2 + e_base**2)),
        consistent_skill_index=float(consistent_count(history, config.consistency_window)),
        change_skill_index=float(switched),
        ball_velocity_norm=math.exp(-config.delta_n * speed_gap**2),
        ball_velocity_angle=1.0 - angle_error**2 / math.pi**2,
        ball_velocity_error=math.exp(-config.delta_v * float(velocity_gap @ velocity_gap)),
        dribbling_near_ball=float(is_dribble and math.sqrt(dist_sq) < config.d_max),
    )
    breakdown.total = float(sum(breakdown.weighted(config.weights).values()))
    return breakdown


def reward_upper_bound(config: RewardConfig) -> float:
    """Largest possible per-step total."""
    bound = 0.0
    for name, weight in config.weights.items():
        scale = config.consistency_window if name == "consistent_skill_index" else 1.0
        bound += max(weight, 0.0) * scale
    return bound
