"""Seeded 2-D dribbling simulator: a point robot and a ball on a strip of terrain zones.

Physics runs at ``dt`` (50 Hz by default); a high-level step holds one skill and
command for ``substeps`` physics steps (10 Hz). The four low-level skills are
closed-form controllers parameterized by :class:`~skillfocus.config.SkillSpec`.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from skillfocus.config import RewardConfig, SkillSet, WorldConfig
from skillfocus.core.exceptions import ShapeMismatchError
from skillfocus.services.curriculum import EpisodeTrace
from skillfocus.services.policy import HierAction, Observation, ObservationLayout
from skillfocus.services.rewards import RewardBreakdown, compute_reward, wrap_angle
from skillfocus.services.terrain import TerrainMap, TerrainZone

logger = logging.getLogger(__name__)

# (batch, window, raw_dim) -> (batch, context_dim)
Estimator = Callable[[np.ndarray], np.ndarray]


@dataclass
class WorldState:
    robot_pos: np.ndarray
    heading: float
    robot_vel: np.ndarray
    ball_pos: np.ndarray
    ball_vel: np.ndarray
    user_command: np.ndarray
    difficulty: int
    start_zone: int
    last_command: np.ndarray
    history: np.ndarray
    ball_start: np.ndarray
    step: int = 0
    substep: int = 0
    last_skill: Optional[int] = None
    skill_history: Tuple[int, ...] = ()
    last_kick_window: int = -1
    velocity_error_sum: float = 0.0
    reward_sum: float = 0.0
    max_robot_x: float = 0.0
    out_of_bounds: bool = False
    curriculum_cell: Optional[Tuple[int, int]] = None

    def clone(self) -> "WorldState":
        return replace(
            self,
            robot_pos=self.robot_pos.copy(),
            robot_vel=self.robot_vel.copy(),
            ball_pos=self.ball_pos.copy(),
            ball_vel=self.ball_vel.copy(),
            user_command=self.user_command.copy(),
            last_command=self.last_command.copy(),
            history=self.history.copy(),
            ball_start=self.ball_start.copy(),
        )


@dataclass
class SkillUsage:
    """Per-zone skill frequencies; ``rows[z]`` is None when zone ``z`` was never visited."""

    zone_kinds: Tuple[str, ...]
    rows: List[Optional[np.ndarray]]
    counts: np.ndarray


def _cap(vector: np.ndarray, limit: float) -> np.ndarray:
    norm = float(np.linalg.norm(vector))
    if norm > limit > 0.0:
        return vector * (limit / norm)
    return vector


def _rotate(vector: np.ndarray, angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([c * vector[0] - s * vector[1], s * vector[0] + c * vector[1]])


def _unit(vector: np.ndarray, fallback: np.ndarray) -> np.ndarray:
    norm = float(np.linalg.norm(vector))
    return vector / norm if norm > 1e-9 else fallback


class DribbleWorld:
    """Stateless stepping functions over :class:`WorldState` values.

    One instance may be shared by many environments; randomness comes only from
    the generator passed to each call.
    """

    def __init__(
        self,
        config: WorldConfig,
        skills: SkillSet,
        rewards: RewardConfig,
        history_window: int = 5,
        context_dim: int = 6,
    ):
        self.config = config
        self.skills = skills
        self.rewards = rewards
        self.history_window = history_window
        self.layout = ObservationLayout(skills.num_skills, skills.command_dim, context_dim)
        self.kick_window_substeps = max(1, int(round(config.kick_window / config.dt)))
        self._maps: Dict[int, TerrainMap] = {}

    def terrain(self, difficulty: int) -> TerrainMap:
        if difficulty not in self._maps:
            self._maps[difficulty] = TerrainMap(self.config, difficulty)
        return self._maps[difficulty]

    def zone_of(self, state: WorldState) -> TerrainZone:
        return self.terrain(state.difficulty).zone_at(float(state.robot_pos[0]))

    # -- reset -------------------------------------------------------------------

    def reset(
        self,
        sample: Tuple,
        rng: np.random.Generator,
        start_zone: Optional[int] = None,
        estimator: Optional[Estimator] = None,
    ) -> Tuple[WorldState, Observation]:
        """Place the robot uniformly in a zone with uniform heading and the ball within ``spawn_radius``.

        ``sample`` is ``(command, difficulty)`` or ``(command, difficulty, cell)``; a
        curriculum cell given here is carried onto the episode trace.
        """
        command, difficulty = sample[0], sample[1]
        cell = tuple(int(c) for c in sample[2]) if len(sample) > 2 else None
        cfg = self.config
        zones = len(cfg.zone_kinds)
        zone = int(rng.integers(zones)) if start_zone is None else int(start_zone)
        x = zone * cfg.zone_length + rng.uniform(0.0, cfg.zone_length)
        y = rng.uniform(-0.5 * cfg.width, 0.5 * cfg.width)
        heading = float(wrap_angle(rng.uniform(-math.pi, math.pi)))
        radius = cfg.spawn_radius * math.sqrt(rng.random())
        bearing = rng.uniform(-math.pi, math.pi)
        robot_pos = np.array([x, y])
        ball_pos = robot_pos + radius * np.array([math.cos(bearing), math.sin(bearing)])

        state = WorldState(
            robot_pos=robot_pos,
            heading=heading,
            robot_vel=np.zeros(2),
            ball_pos=ball_pos,
            ball_vel=np.zeros(2),
            user_command=np.asarray(command, dtype=np.float64).copy(),
            difficulty=int(difficulty),
            start_zone=zone,
            last_command=np.zeros(self.skills.command_dim),
            history=np.zeros((self.history_window, self.layout.raw_dim)),
            ball_start=ball_pos.copy(),
            max_robot_x=x,
            curriculum_cell=cell,
        )
        state.history[:] = self.raw_features(state)
        return state, self.observe(state, estimator)

    # -- physics -----------------------------------------------------------------

    def low_level_step(
        self, state: WorldState, skill: int, command: np.ndarray, rng: np.random.Generator
    ) -> WorldState:
        """Advance one physics step of ``dt`` under ``skill`` (0-based index)."""
        state = state.clone()
        self._substep(state, skill, np.asarray(command, dtype=np.float64), rng)
        return state

    def _substep(self, state: WorldState, skill: int, command: np.ndarray, rng: np.random.Generator) -> None:
        cfg = self.config
        spec = self.skills.skills[skill]
        dt = cfg.dt
        c = np.clip(command, -cfg.command_clip, cfg.command_clip)
        terrain = self.terrain(state.difficulty)
        robot_zone = terrain.zone_at(float(state.robot_pos[0]))
        ball_zone = terrain.zone_at(float(state.ball_pos[0]))
        rel = state.ball_pos - state.robot_pos
        dims = spec.command_dims

        if spec.kind == "dribble":
            target = np.array([c[dims[0]], c[dims[1] if len(dims) > 1 else dims[0]]]) * cfg.v_scale
            window = state.substep // self.kick_window_substeps
            if float(np.linalg.norm(rel)) < cfg.reach_radius and window != state.last_kick_window:
                state.ball_vel = state.ball_vel + _cap(spec.kick_gain * (target - state.ball_vel), spec.kick_cap)
                state.last_kick_window = window
            approach = _unit(target, _unit(rel, np.array([1.0, 0.0])))
            control_point = state.ball_pos - cfg.control_offset * approach
            state.robot_vel = _cap(cfg.steer_gain * (control_point - state.robot_pos), spec.max_speed)
            turn = float(wrap_angle(math.atan2(rel[1], rel[0]) - state.heading))
            limit = cfg.omega_scale * dt
            state.heading = float(wrap_angle(state.heading + min(max(turn, -limit), limit)))
        else:
            body = np.array([c[dims[0]], c[dims[1]]]) * cfg.v_scale
            state.robot_vel = _cap(_rotate(body, state.heading), spec.max_speed)
            omega = c[dims[2]] * cfg.omega_scale if len(dims) > 2 else 0.0
            state.heading = float(wrap_angle(state.heading + omega * dt))

        noise = rng.standard_normal(4) * (spec.roughness_sensitivity * math.sqrt(dt))
        state.robot_vel = state.robot_vel + robot_zone.roughness * noise[:2]
        state.robot_pos = state.robot_pos + state.robot_vel * dt

        state.ball_vel = state.ball_vel + ball_zone.roughness * noise[2:]
        x_old = float(state.ball_pos[0])
        self._integrate_ball(state, ball_zone)
        vx = terrain.stair_velocity(ball_zone, x_old, float(state.ball_pos[0]), float(state.ball_vel[0]))
        state.ball_vel[0] = vx

        state.substep += 1
        state.max_robot_x = max(state.max_robot_x, float(state.robot_pos[0]))
        x, y = state.robot_pos
        if x < 0.0 or x > cfg.length or abs(y) > 0.5 * cfg.width:
            state.out_of_bounds = True

    def _integrate_ball(self, state: WorldState, zone: TerrainZone) -> None:
        """Exact solution of v' = a - μv over one step with ``a`` and ``μ`` held constant."""
        dt = self.config.dt
        a = zone.slope_vector
        mu = zone.friction
        v0 = state.ball_vel
        if mu > 0.0:
            terminal = a / mu
            decay = math.exp(-mu * dt)
            state.ball_pos = state.ball_pos + terminal * dt + (v0 - terminal) * (1.0 - decay) / mu
            state.ball_vel = terminal + (v0 - terminal) * decay
        else:
            state.ball_pos = state.ball_pos + v0 * dt + 0.5 * a * dt * dt
            state.ball_vel = v0 + a * dt

    def high_level_step(
        self,
        state: WorldState,
        action: HierAction,
        rng: np.random.Generator,
        estimator: Optional[Estimator] = None,
    ) -> Tuple[WorldState, Observation, float, RewardBreakdown, bool]:
        """Hold ``action`` for ``substeps`` physics steps, then score the result."""
        cfg = self.config
        command = np.asarray(action.command, dtype=np.float64)
        if command.shape != (self.skills.command_dim,):
            raise ShapeMismatchError(
                f"Command has shape {command.shape}, expected ({self.skills.command_dim},)",
                details={"shape": list(command.shape)},
            )
        nxt = state.clone()
        for _ in range(cfg.substeps):
            self._substep(nxt, action.skill, command, rng)

        nxt.step += 1
        nxt.skill_history = (state.skill_history + (action.skill,))[-(self.rewards.consistency_window + 1):]
        nxt.last_skill = action.skill
        nxt.last_command = np.clip(command, -cfg.command_clip, cfg.command_clip)
        breakdown = compute_reward(
            nxt.robot_pos,
            nxt.heading,
            nxt.ball_pos,
            nxt.ball_vel,
            nxt.user_command,
            nxt.skill_history,
            self.skills.skills[action.skill].kind == "dribble",
            self.rewards,
        )
        nxt.velocity_error_sum += breakdown.ball_velocity_error
        nxt.reward_sum += breakdown.total
        nxt.history = np.vstack([nxt.history[1:], self.raw_features(nxt)[None, :]])
        done = nxt.step >= cfg.episode_steps or nxt.out_of_bounds
        return nxt, self.observe(nxt, estimator), breakdown.total, breakdown, done

    # -- observations ------------------------------------------------------------

    def raw_features(self, state: WorldState) -> np.ndarray:
        onehot = np.zeros(self.skills.num_skills)
        if state.last_skill is not None:
            onehot[state.last_skill] = 1.0
        return np.concatenate(
            [
                [math.cos(state.heading), math.sin(state.heading)],
                state.robot_vel,
                state.ball_pos - state.robot_pos,
                onehot,
                state.last_command,
                state.user_command,
            ]
        )

    def privileged(self, state: WorldState) -> np.ndarray:
        """True ball velocity and the parameters of the zone under the ball."""
        zone = self.terrain(state.difficulty).zone_at(float(state.ball_pos[0]))
        return np.concatenate([state.ball_vel, zone.privileged()])

    def observe(self, state: WorldState, estimator: Optional[Estimator] = None) -> Observation:
        batch = self.observe_many([state], estimator)
        return Observation(batch.actor[0], batch.full_state[0], batch.raw[0], batch.context[0])

    def observe_many(self, states: Sequence[WorldState], estimator: Optional[Estimator] = None) -> Observation:
        """Batched observations; the context comes from one estimator call over all histories."""
        raw = np.stack([self.raw_features(s) for s in states])
        if estimator is None:
            context = np.zeros((len(states), self.layout.context_dim))
        else:
            context = np.asarray(estimator(np.stack([s.history for s in states])), dtype=np.float64)
        actor = np.concatenate([raw, context], axis=1)
        privileged = np.stack([self.privileged(s) for s in states])
        return Observation(actor, np.concatenate([actor, privileged], axis=1), raw, context)

    # -- episode summaries -------------------------------------------------------

    def episode_trace(self, state: WorldState) -> EpisodeTrace:
        mean_error = state.velocity_error_sum / state.step if state.step else 0.0
        return EpisodeTrace(
            command=state.user_command.copy(),
            difficulty=state.difficulty,
            ball_start=state.ball_start.copy(),
            ball_end=state.ball_pos.copy(),
            robot_end=state.robot_pos.copy(),
            velocity_error_mean=mean_error,
            cell=state.curriculum_cell,
        )

    def crossed_start_zone(self, state: WorldState) -> bool:
        """Whether the robot ever passed the far (+x) boundary of its start zone."""
        return state.max_robot_x >= (state.start_zone + 1) * self.config.zone_length


def skill_usage_report(
    zone_indices: Sequence[int], skills: Sequence[int], zone_kinds: Sequence[str], num_skills: int
) -> SkillUsage:
    """Per-zone frequency of each executed skill (0-based indices)."""
    counts = np.zeros((len(zone_kinds), num_skills))
    for zone, skill in zip(zone_indices, skills):
        counts[int(zone), int(skill)] += 1.0
    totals = counts.sum(axis=1)
    rows: List[Optional[np.ndarray]] = []
    for z, kind in enumerate(zone_kinds):
        if totals[z] == 0:
            logger.warning(f"No steps recorded on terrain '{kind}', row marked absent")
            rows.append(None)
        else:
            rows.append(counts[z] / totals[z])
    return SkillUsage(tuple(zone_kinds), rows, totals.astype(int))
