"""Parallel rollout collection over a fixed set of environments."""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from skillfocus.core.layers import PolicyParams
from skillfocus.core.rng import RngStreams
from skillfocus.services import curriculum
from skillfocus.services.buffer import RolloutBuffer
from skillfocus.services.curriculum import CurriculumGrid, EpisodeOutcome
from skillfocus.services.policy import HierAction, HierarchicalPolicy
from skillfocus.services.world import DribbleWorld, Estimator, WorldState

logger = logging.getLogger(__name__)


@dataclass
class EnvStep:
    """Result of one high-level step of one environment (after any auto-reset)."""

    state: WorldState
    reward: float
    done: bool
    outcome: Optional[EpisodeOutcome] = None
    episode_reward: Optional[float] = None
    episode_length: Optional[int] = None


@dataclass
class Rollout:
    buffer: RolloutBuffer
    outcomes: List[EpisodeOutcome] = field(default_factory=list)
    episode_rewards: List[float] = field(default_factory=list)
    episode_lengths: List[int] = field(default_factory=list)

    def skill_usage(self, num_skills: int) -> List[float]:
        counts = np.bincount(self.buffer.skills.reshape(-1), minlength=num_skills)
        return (counts / counts.sum()).tolist()


class Collector:
    """Steps ``num_envs`` environments for ``horizon`` high-level steps per call.

    Every environment owns its generator (``env.{i}``); actions come from the
    shared ``sampler`` stream on the coordinator. With ``num_workers > 1`` the
    environment steps run on a thread pool and are gathered in environment
    order, so results do not depend on the worker count.
    """

    def __init__(
        self,
        world: DribbleWorld,
        policy: HierarchicalPolicy,
        rngs: RngStreams,
        num_envs: int,
        horizon: int,
        num_workers: int = 1,
        gamma: float = 0.99,
        lam: float = 0.95,
    ):
        self.world = world
        self.policy = policy
        self.rngs = rngs
        self.num_envs = num_envs
        self.horizon = horizon
        self.gamma = gamma
        self.lam = lam
        self.env_rngs = [rngs.env(i) for i in range(num_envs)]
        self.sampler = rngs.get("sampler")
        self._pool = ThreadPoolExecutor(max_workers=num_workers) if num_workers > 1 else None
        self.states: List[WorldState] = []

    def close(self) -> None:
        if self._pool is not None:
            self._pool.shutdown(wait=True)
            self._pool = None

    def _map(self, fn, *iterables) -> list:
        if self._pool is None:
            return list(map(fn, *iterables))
        return list(self._pool.map(fn, *iterables))

    def reset(self, grid: CurriculumGrid) -> None:
        def reset_env(i: int) -> WorldState:
            rng = self.env_rngs[i]
            return self.world.reset(curriculum.sample_cell(grid, rng), rng)[0]

        self.states = self._map(reset_env, range(self.num_envs))

    def _step_env(self, i: int, action: HierAction, grid: CurriculumGrid) -> EnvStep:
        rng = self.env_rngs[i]
        state, _, reward, _, done = self.world.high_level_step(self.states[i], action, rng)
        if not done:
            return EnvStep(state, reward, done)
        outcome = curriculum.evaluate_gates(self.world.episode_trace(state), grid)
        fresh, _ = self.world.reset(curriculum.sample_cell(grid, rng), rng)
        return EnvStep(fresh, reward, done, outcome, state.reward_sum, state.step)

    def collect(self, params: PolicyParams, grid: CurriculumGrid, estimator: Optional[Estimator]) -> Rollout:
        """Reset every environment from ``grid`` and run one horizon under ``params``.

        ``grid`` is a read snapshot: episode outcomes are returned in completion
        order (step, then environment) for the caller to apply.
        """
        self.reset(grid)
        layout = self.policy.layout
        buffer = RolloutBuffer(self.horizon, self.num_envs, layout, self.world.history_window)
        rollout = Rollout(buffer)
        for _ in range(self.horizon):
            obs = self.world.observe_many(self.states, estimator)
            histories = np.stack([s.history for s in self.states])
            actions = self.policy.sample_action(params, obs.actor, self.sampler)
            values = self.policy.critic_forward(params, obs.full_state)
            steps = self._map(lambda i, a: self._step_env(i, a, grid), range(self.num_envs), actions)

            buffer.add(
                obs.actor,
                obs.full_state,
                actions,
                rewards=np.array([s.reward for s in steps]),
                dones=np.array([s.done for s in steps], dtype=np.float64),
                values=values,
                histories=histories,
                contexts=obs.full_state[:, layout.actor_dim:],
            )
            for step in steps:
                if step.outcome is not None:
                    rollout.outcomes.append(step.outcome)
                    rollout.episode_rewards.append(step.episode_reward)
                    rollout.episode_lengths.append(step.episode_length)
            self.states = [s.state for s in steps]

        final = self.world.observe_many(self.states, estimator)
        buffer.compute_advantages(
            self.policy.critic_forward(params, final.full_state),
            gamma=self.gamma,
            lam=self.lam,
        )
        return rollout

