"""Fixed-horizon rollout storage and generalized advantage estimation."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Dict, Optional, Sequence

import numpy as np

from skillfocus.core.exceptions import NonFiniteError, ShapeMismatchError
from skillfocus.services.policy import HierAction, ObservationLayout, PolicyRecord

logger = logging.getLogger(__name__)


@dataclass
class Transition:
    """One stored high-level step of one environment."""

    observation: np.ndarray
    full_state: np.ndarray
    action: HierAction
    reward: float
    done: bool
    value: float


def compute_gae(
    rewards: np.ndarray,
    values: np.ndarray,
    dones: np.ndarray,
    bootstrap: np.ndarray,
    gamma: float,
    lam: float,
):
    """Generalized advantage estimation along the leading (time) axis.

    ``dones[t]`` marks that the episode ended after step ``t``; ``bootstrap`` is
    the value of the state following the last step. Returns (advantages, returns).
    """
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    dones = np.asarray(dones, dtype=np.float64)
    bootstrap = np.asarray(bootstrap, dtype=np.float64)
    if rewards.shape != values.shape or rewards.shape != dones.shape:
        raise ShapeMismatchError(
            "rewards, values and dones must have the same shape",
            details={"rewards": list(rewards.shape), "values": list(values.shape), "dones": list(dones.shape)},
        )
    if rewards.ndim == 0 or bootstrap.shape != rewards.shape[1:]:
        raise ShapeMismatchError(
            f"bootstrap shape {bootstrap.shape} does not match per-step shape {rewards.shape[1:]}",
            details={"bootstrap": list(bootstrap.shape)},
        )

    advantages = np.zeros_like(rewards)
    running = np.zeros_like(bootstrap)
    next_value = bootstrap
    for t in reversed(range(len(rewards))):
        live = 1.0 - dones[t]
        delta = rewards[t] + gamma * next_value * live - values[t]
        running = delta + gamma * lam * live * running
        advantages[t] = running
        next_value = values[t]
    return advantages, advantages + values


class RolloutBuffer:
    """(horizon, num_envs) grid of transitions plus their advantages and returns.

    Besides the policy inputs it keeps each step's observation history and the
    simulator's ground-truth context, which the estimator regresses on.
    """

    def __init__(self, horizon: int, num_envs: int, layout: ObservationLayout, history_window: int):
        self.horizon = horizon
        self.num_envs = num_envs
        self.layout = layout
        shape = (horizon, num_envs)
        k, d = layout.num_skills, layout.command_dim
        self.observations = np.zeros(shape + (layout.actor_dim,))
        self.full_states = np.zeros(shape + (layout.state_dim,))
        self.histories = np.zeros(shape + (history_window, layout.raw_dim))
        self.contexts = np.zeros(shape + (layout.context_dim,))
        self.skills = np.zeros(shape, dtype=int)
        self.commands = np.zeros(shape + (d,))
        self.log_prob_index = np.zeros(shape)
        self.log_prob_command_per_skill = np.zeros(shape + (k,))
        self.log_prob_command_joint = np.zeros(shape)
        self.skill_focus_weights = np.zeros(shape + (k,))
        self.rewards = np.zeros(shape)
        self.dones = np.zeros(shape)
        self.values = np.zeros(shape)
        self.advantages: Optional[np.ndarray] = None
        self.returns: Optional[np.ndarray] = None
        self.step = 0

    @property
    def full(self) -> bool:
        return self.step == self.horizon

    def add(
        self,
        observations: np.ndarray,
        full_states: np.ndarray,
        actions: Sequence[HierAction],
        rewards: np.ndarray,
        dones: np.ndarray,
        values: np.ndarray,
        histories: Optional[np.ndarray] = None,
        contexts: Optional[np.ndarray] = None,
    ) -> None:
        if self.full:
            raise ShapeMismatchError("Rollout buffer is full", details={"horizon": self.horizon})
        if len(actions) != self.num_envs:
            raise ShapeMismatchError(
                f"Expected {self.num_envs} actions, got {len(actions)}",
                details={"num_envs": self.num_envs},
            )
        t = self.step
        self.observations[t] = observations
        self.full_states[t] = full_states
        if histories is not None:
            self.histories[t] = histories
        if contexts is not None:
            self.contexts[t] = contexts
        for i, action in enumerate(actions):
            self.skills[t, i] = action.skill
            self.commands[t, i] = action.command
            self.log_prob_index[t, i] = action.log_prob_index
            self.log_prob_command_per_skill[t, i] = action.log_prob_command_per_skill
            self.log_prob_command_joint[t, i] = action.log_prob_command_joint
            self.skill_focus_weights[t, i] = action.skill_focus_weights
        self.rewards[t] = rewards
        self.dones[t] = dones
        self.values[t] = values
        self.step += 1

    def transition(self, t: int, env: int) -> Transition:
        action = HierAction(
            skill=int(self.skills[t, env]),
            command=self.commands[t, env],
            log_prob_index=float(self.log_prob_index[t, env]),
            log_prob_command_per_skill=self.log_prob_command_per_skill[t, env],
            log_prob_command_joint=float(self.log_prob_command_joint[t, env]),
            skill_focus_weights=self.skill_focus_weights[t, env],
        )
        return Transition(
            observation=self.observations[t, env],
            full_state=self.full_states[t, env],
            action=action,
            reward=float(self.rewards[t, env]),
            done=bool(self.dones[t, env]),
            value=float(self.values[t, env]),
        )

    def compute_advantages(self, bootstrap: np.ndarray, gamma: float, lam: float) -> None:
        if not self.full:
            raise ShapeMismatchError(
                f"Buffer holds {self.step} of {self.horizon} steps", details={"step": self.step}
            )
        self.advantages, self.returns = compute_gae(self.rewards, self.values, self.dones, bootstrap, gamma, lam)
        if not np.all(np.isfinite(self.advantages)):
            raise NonFiniteError("Advantages contain non-finite values")

    def flatten(self) -> Dict[str, np.ndarray]:
        """Merge the time and environment axes, ready for minibatching."""
        if self.advantages is None:
            raise ShapeMismatchError("Advantages have not been computed")
        n = self.horizon * self.num_envs

        def flat(array: np.ndarray) -> np.ndarray:
            return array.reshape((n,) + array.shape[2:])

        return {
            "observations": flat(self.observations),
            "full_states": flat(self.full_states),
            "skills": flat(self.skills),
            "commands": flat(self.commands),
            "log_prob_index": flat(self.log_prob_index),
            "log_prob_command_per_skill": flat(self.log_prob_command_per_skill),
            "log_prob_command_joint": flat(self.log_prob_command_joint),
            "skill_focus_weights": flat(self.skill_focus_weights),
            "advantages": flat(self.advantages),
            "returns": flat(self.returns),
            "values": flat(self.values),
        }

    def record(self, batch: Dict[str, np.ndarray]) -> PolicyRecord:
        return PolicyRecord(
            skills=batch["skills"],
            commands=batch["commands"],
            log_prob_index=batch["log_prob_index"],
            log_prob_command_per_skill=batch["log_prob_command_per_skill"],
            log_prob_command_joint=batch["log_prob_command_joint"],
            skill_focus_weights=batch["skill_focus_weights"],
        )


def normalize_advantages(advantages: np.ndarray) -> np.ndarray:
    """Zero mean, unit standard deviation over the whole batch."""
    std = advantages.std()
    centered = advantages - advantages.mean()
    if std < 1e-12:
        return centered
    return centered / std
