"""Policy evaluation: trajectory dumps, skill-usage matrix and per-terrain statistics."""

from __future__ import annotations

import logging
from collections import defaultdict
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from skillfocus.config import RunConfig
from skillfocus.core.rng import RngStreams
from skillfocus.models.schemas import EvaluationSummary, TrajectoryRecord
from skillfocus.services import curriculum
from skillfocus.services.checkpoint import load_checkpoint
from skillfocus.services.policy import HierarchicalPolicy
from skillfocus.services.rewards import heading_of, wrap_angle
from skillfocus.services.trainer import check_config, prepare_output_dir
from skillfocus.services.world import DribbleWorld, skill_usage_report

logger = logging.getLogger(__name__)

TRAJECTORY_FILE = "trajectories.jsonl"
SUMMARY_FILE = "summary.json"


def _mean_or_none(values: List[float]) -> Optional[float]:
    return float(np.mean(values)) if values else None


def evaluate(
    checkpoint_path: Path,
    config: RunConfig,
    output_dir: Optional[Path] = None,
) -> EvaluationSummary:
    """Roll out ``config.eval_episodes`` episodes of the checkpointed policy.

    Deterministic mode executes the argmax skill and the mean command. Commands
    and difficulties come from the checkpoint's curriculum unless fixed through
    ``eval_command`` / ``eval_difficulty``; ``eval_start_zone`` pins the start zone.
    """
    output_dir = prepare_output_dir(Path(output_dir or config.output_dir))
    network, skills = config.network(), config.skills()
    policy = HierarchicalPolicy(network, skills)
    checkpoint = load_checkpoint(checkpoint_path, policy.expected_shapes())
    check_config(checkpoint.config, config, ignore={"seed"})
    params = checkpoint.params

    world_config = config.world()
    world = DribbleWorld(world_config, skills, config.rewards(), network.history_window, network.context_dim)
    if checkpoint.command_weights is not None and checkpoint.difficulty_weights is not None:
        grid = curriculum.load_grid(config.curriculum(), checkpoint.command_weights, checkpoint.difficulty_weights)
    else:
        grid = curriculum.init_grid(config.curriculum())

    kinds = list(world_config.zone_kinds)
    start_zone = kinds.index(config.eval_start_zone) if config.eval_start_zone is not None else None
    rngs = RngStreams(config.seed)
    env_rng, sampler = rngs.get("eval.env"), rngs.get("eval.sampler")
    estimator = lambda histories: policy.estimator_forward(params, histories)  # noqa: E731

    step_zones: List[int] = []
    step_skills: List[int] = []
    ball_speed: Dict[str, List[float]] = defaultdict(list)
    heading_error: Dict[str, List[float]] = defaultdict(list)
    completed: Dict[str, List[float]] = defaultdict(list)
    traversed: Dict[str, List[float]] = defaultdict(list)
    episode_rewards: List[float] = []
    episode_lengths: List[int] = []

    with open(output_dir / TRAJECTORY_FILE, "w", encoding="utf-8") as dump:
        for episode in range(config.eval_episodes):
            command, difficulty = curriculum.sample(grid, env_rng)
            if config.eval_command is not None:
                command = np.asarray(config.eval_command, dtype=np.float64)
            if config.eval_difficulty is not None:
                difficulty = config.eval_difficulty
            state, obs = world.reset((command, difficulty), env_rng, start_zone, estimator)
            done = False
            while not done:
                action = policy.sample_action(params, obs.actor, sampler, config.eval_deterministic)[0]
                zone = world.zone_of(state)
                t = state.step
                state, obs, reward, breakdown, done = world.high_level_step(state, action, env_rng, estimator)
                step_zones.append(zone.index)
                step_skills.append(action.skill)
                ball_speed[zone.kind].append(float(np.linalg.norm(state.ball_vel)))
                if np.linalg.norm(state.user_command) > 1e-12:
                    error = wrap_angle(heading_of(state.ball_vel) - heading_of(state.user_command))
                    heading_error[zone.kind].append(abs(float(error)))
                record = TrajectoryRecord(
                    episode=episode,
                    t=t,
                    zone=zone.kind,
                    p=state.robot_pos.tolist(),
                    psi=state.heading,
                    b=state.ball_pos.tolist(),
                    vb=state.ball_vel.tolist(),
                    d=action.skill_id,
                    c=np.asarray(action.command).tolist(),
                    reward=reward,
                    reward_terms=breakdown.terms(),
                )
                dump.write(record.model_dump_json() + "\n")

            start_kind = kinds[state.start_zone]
            completed[start_kind].append(float(not state.out_of_bounds))
            traversed[start_kind].append(float(world.crossed_start_zone(state)))
            episode_rewards.append(state.reward_sum)
            episode_lengths.append(state.step)

    usage = skill_usage_report(step_zones, step_skills, kinds, skills.num_skills)
    summary = EvaluationSummary(
        checkpoint=str(checkpoint_path),
        episodes=config.eval_episodes,
        deterministic=config.eval_deterministic,
        seed=config.seed,
        no_data=config.eval_episodes == 0,
        mean_reward=_mean_or_none(episode_rewards),
        mean_episode_length=_mean_or_none(episode_lengths),
        terrains=kinds,
        skill_usage=[None if row is None else row.tolist() for row in usage.rows],
        skill_steps=usage.counts.tolist(),
        completion_fraction={kind: _mean_or_none(completed[kind]) for kind in kinds},
        traversal_fraction={kind: _mean_or_none(traversed[kind]) for kind in kinds},
        mean_ball_speed={kind: _mean_or_none(ball_speed[kind]) for kind in kinds},
        mean_heading_error={kind: _mean_or_none(heading_error[kind]) for kind in kinds},
    )
    (output_dir / SUMMARY_FILE).write_text(summary.model_dump_json(indent=2), encoding="utf-8")
    logger.info(
        f"Evaluated {config.eval_episodes} episodes: mean reward {summary.mean_reward}, "
        f"mean length {summary.mean_episode_length}"
    )
    return summary
