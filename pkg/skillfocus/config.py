"""Run configuration using Pydantic Settings.

A run is configured from a dotenv-style key-value file (``KEY=value`` per line,
list values as JSON) overlaid with command-line flags. Precedence is
flags > file > defaults; the process environment is deliberately not consulted
so a (config file, seed) pair fully determines a run.
"""

import hashlib
import json
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

from skillfocus.core.exceptions import ConfigError

PROJECT_ROOT = Path(__file__).parent.parent

ZoneKind = Literal["flat", "ramp_up", "ramp_down", "rough", "stair_descent"]
SkillKind = Literal["dribble", "locomotion"]
Algorithm = Literal["dsf_po", "standard_ppo"]

# Fields that do not change what a run computes; excluded from the config hash.
RUNTIME_FIELDS = {
    "output_dir",
    "log_level",
    "train_iterations",
    "train_checkpoint_every",
    "train_num_workers",
    "eval_episodes",
    "eval_deterministic",
    "eval_command",
    "eval_difficulty",
    "eval_start_zone",
}


class DsfPoConfig(BaseModel):
    """Hyperparameters of the policy update; identical for both algorithms in an ablation."""

    model_config = ConfigDict(frozen=True)

    algorithm: Algorithm = "dsf_po"
    clip: float = Field(0.2, gt=0.0, lt=1.0)
    gamma: float = Field(0.99, gt=0.0, le=1.0)
    gae_lambda: float = Field(0.95, ge=0.0, le=1.0)
    epochs: int = Field(5, ge=1)
    minibatches: int = Field(4, ge=1)
    entropy_coef: float = Field(0.005, ge=0.0)
    value_coef: float = Field(1.0, ge=0.0)
    lr: float = Field(3e-4, gt=0.0)
    max_grad_norm: float = Field(1.0, ge=0.0)
    normalize_advantages: bool = True


class SkillSpec(BaseModel):
    """One frozen low-level skill: the command subset it consumes and its controller gains."""

    model_config = ConfigDict(frozen=True)

    id: int = Field(..., ge=1)
    kind: SkillKind
    command_dims: Tuple[int, ...]
    kick_gain: float = Field(0.0, ge=0.0)
    kick_cap: float = Field(0.0, ge=0.0)
    max_speed: float = Field(..., gt=0.0)
    roughness_sensitivity: float = Field(1.0, ge=0.0)


class SkillSet(BaseModel):
    """The K skills available to the skill-selector head."""

    model_config = ConfigDict(frozen=True)

    skills: Tuple[SkillSpec, ...]
    command_dim: int = 5

    @model_validator(mode="after")
    def _check_dims(self):
        for skill in self.skills:
            if not skill.command_dims or any(d < 0 or d >= self.command_dim for d in skill.command_dims):
                raise ValueError(f"skill {skill.id} command dims {skill.command_dims} outside 0..{self.command_dim - 1}")
        return self

    @property
    def num_skills(self) -> int:
        return len(self.skills)

    def subset_mask(self) -> np.ndarray:
        """(command_dim, K) indicator of which command dims belong to each skill."""
        mask = np.zeros((self.command_dim, self.num_skills))
        for k, skill in enumerate(self.skills):
            mask[list(skill.command_dims), k] = 1.0
        return mask

    def active_matrix(self, skill_indices: np.ndarray) -> np.ndarray:
        """(B, K) indicator: skill k's command subset equals the subset consumed by the executed skill."""
        subsets = [tuple(sorted(s.command_dims)) for s in self.skills]
        same = np.array([[float(a == b) for b in subsets] for a in subsets])
        return same[np.asarray(skill_indices, dtype=int)]

    def dribble_mask(self) -> np.ndarray:
        return np.array([s.kind == "dribble" for s in self.skills])


class NetworkConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    sfe_widths: Tuple[int, ...] = (512, 256, 128)
    critic_widths: Tuple[int, ...] = (128, 128)
    estimator_widths: Tuple[int, ...] = (128, 128)
    activation: Literal["elu", "tanh"] = "elu"
    init_std: float = Field(0.5, gt=0.0)
    head_gain: float = Field(0.01, gt=0.0)
    history_window: int = Field(5, ge=1)
    context_dim: int = 6


class WorldConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    zone_kinds: Tuple[ZoneKind, ...] = ("flat", "ramp_up", "ramp_down", "rough", "stair_descent")
    zone_length: float = Field(10.0, gt=0.0)
    width: float = Field(10.0, gt=0.0)
    dt: float = Field(0.02, gt=0.0)
    substeps: int = Field(5, ge=1)
    episode_steps: int = Field(200, ge=1)
    v_scale: float = 1.5
    omega_scale: float = 2.0
    command_clip: float = 1.5
    reach_radius: float = 0.4
    kick_window: float = Field(0.1, gt=0.0)
    control_offset: float = 0.3
    steer_gain: float = 4.0
    spawn_radius: float = 2.0
    base_friction: float = Field(0.2, ge=0.0)
    slope_per_level: float = Field(0.2, ge=0.0)
    roughness_per_level: float = Field(0.1, ge=0.0)
    rough_friction_per_level: float = Field(0.05, ge=0.0)
    stair_period: float = Field(0.5, gt=0.0)
    stair_drop_per_level: float = Field(0.01, ge=0.0)
    gravity: float = 9.81

    @property
    def length(self) -> float:
        return self.zone_length * len(self.zone_kinds)

    @property
    def high_level_dt(self) -> float:
        return self.dt * self.substeps


class RewardConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    weights: Dict[str, float] = Field(
        default_factory=lambda: {
            "robot_ball_distance": 4.0,
            "yaw_alignment": 4.0,
            "consistent_skill_index": 0.1,
            "change_skill_index": -0.005,
            "ball_velocity_norm": 8.0,
            "ball_velocity_angle": 8.0,
            "ball_velocity_error": 8.0,
            "dribbling_near_ball": 1.0,
        }
    )
    delta_p: float = Field(0.5, gt=0.0)
    delta_psi: float = Field(1.0, gt=0.0)
    delta_n: float = Field(2.0, gt=0.0)
    delta_v: float = Field(2.0, gt=0.0)
    d_max: float = Field(0.5, gt=0.0)
    consistency_window: int = Field(10, ge=1)


class CurriculumConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    command_range: float = Field(1.5, gt=0.0)
    cell_size: float = Field(0.1, gt=0.0)
    initial_box: float = Field(0.5, gt=0.0)
    max_difficulty: int = Field(5, ge=0)
    initial_difficulties: Tuple[int, ...] = (0, 1)
    d_th1: float = 3.0
    d_th2: float = 1.0
    velocity_gate: float = 0.5

    @model_validator(mode="after")
    def _check_lattice(self):
        cells = 2.0 * self.command_range / self.cell_size
        if abs(cells - round(cells)) > 1e-9:
            raise ValueError(f"cell_size {self.cell_size} does not divide [-{self.command_range}, {self.command_range}]")
        if any(t < 0 or t > self.max_difficulty for t in self.initial_difficulties) or not self.initial_difficulties:
            raise ValueError("initial_difficulties must be a non-empty subset of 0..max_difficulty")
        return self

    @property
    def cells_per_axis(self) -> int:
        return int(round(2.0 * self.command_range / self.cell_size))


class RunConfig(BaseSettings):
    """Every setting of a training/evaluation run."""

    model_config = SettingsConfigDict(
        env_file=None,
        env_file_encoding="utf-8",
        case_sensitive=False,
        extra="forbid",
    )

    # General
    seed: int = 0
    log_level: str = "INFO"
    output_dir: Path = PROJECT_ROOT / "runs" / "default"

    # Training loop
    train_num_envs: int = Field(64, ge=1)
    train_horizon: int = Field(200, ge=1)
    train_iterations: int = Field(300, ge=0)
    train_checkpoint_every: int = Field(50, ge=0)
    train_num_workers: int = Field(1, ge=1)
    train_estimator_pretrain_iterations: int = Field(2, ge=0)
    train_estimator_epochs: int = Field(20, ge=0)
    train_estimator_lr: float = Field(1e-3, gt=0.0)
    train_estimator_minibatch: int = Field(512, ge=1)

    # Policy update (shared by both algorithms)
    ppo_algorithm: Algorithm = "dsf_po"
    ppo_clip: float = 0.2
    ppo_gamma: float = 0.99
    ppo_lambda: float = 0.95
    ppo_epochs: int = 5
    ppo_minibatches: int = 4
    ppo_entropy_coef: float = 0.005
    ppo_value_coef: float = 1.0
    ppo_lr: float = 3e-4
    ppo_max_grad_norm: float = 1.0
    ppo_normalize_advantages: bool = True

    # Networks
    net_sfe_widths: List[int] = [512, 256, 128]
    net_critic_widths: List[int] = [128, 128]
    net_estimator_widths: List[int] = [128, 128]
    net_activation: Literal["elu", "tanh"] = "elu"
    net_init_std: float = 0.5
    net_head_gain: float = 0.01
    net_history_window: int = 5

    # Low-level skills (index k describes skill k + 1)
    skill_kinds: List[SkillKind] = ["dribble", "dribble", "locomotion", "locomotion"]
    skill_command_dims: List[List[int]] = [[0, 1], [0, 1], [2, 3, 4], [2, 3, 4]]
    skill_kick_gains: List[float] = [0.3, 0.7, 0.0, 0.0]
    skill_kick_caps: List[float] = [0.3, 0.8, 0.0, 0.0]
    skill_max_speeds: List[float] = [1.5, 1.5, 1.5, 0.75]
    skill_roughness_sensitivity: List[float] = [1.0, 1.0, 2.0, 0.5]
    command_dim: int = 5

    # Simulator
    world_zone_kinds: List[ZoneKind] = ["flat", "ramp_up", "ramp_down", "rough", "stair_descent"]
    world_zone_length: float = 10.0
    world_width: float = 10.0
    world_dt: float = 0.02
    world_substeps: int = 5
    world_episode_steps: int = 200
    world_v_scale: float = 1.5
    world_omega_scale: float = 2.0
    world_command_clip: float = 1.5
    world_reach_radius: float = 0.4
    world_kick_window: float = 0.1
    world_control_offset: float = 0.3
    world_steer_gain: float = 4.0
    world_spawn_radius: float = 2.0
    world_base_friction: float = 0.2
    world_slope_per_level: float = 0.2
    world_roughness_per_level: float = 0.1
    world_rough_friction_per_level: float = 0.05
    world_stair_period: float = 0.5
    world_stair_drop_per_level: float = 0.01

    # Reward kernels and weights
    reward_weights: Dict[str, float] = Field(default_factory=lambda: RewardConfig().weights)
    reward_delta_p: float = 0.5
    reward_delta_psi: float = 1.0
    reward_delta_n: float = 2.0
    reward_delta_v: float = 2.0
    reward_d_max: float = 0.5
    reward_consistency_window: int = 10

    # Curriculum
    curriculum_command_range: float = 1.5
    curriculum_cell_size: float = 0.1
    curriculum_initial_box: float = 0.5
    curriculum_max_difficulty: int = 5
    curriculum_initial_difficulties: List[int] = [0, 1]
    curriculum_d_th1: float = 3.0
    curriculum_d_th2: float = 1.0
    curriculum_velocity_gate: float = 0.5

    # Evaluation
    eval_episodes: int = Field(20, ge=0)
    eval_deterministic: bool = False
    eval_command: Optional[List[float]] = None
    eval_difficulty: Optional[int] = None
    eval_start_zone: Optional[ZoneKind] = None

    @classmethod
    def settings_customise_sources(
        cls, settings_cls, init_settings, env_settings, dotenv_settings, file_secret_settings
    ):
        return (init_settings, dotenv_settings)

    @model_validator(mode="after")
    def _check_sections(self):
        lengths = {
            len(self.skill_kinds),
            len(self.skill_command_dims),
            len(self.skill_kick_gains),
            len(self.skill_kick_caps),
            len(self.skill_max_speeds),
            len(self.skill_roughness_sensitivity),
        }
        if len(lengths) != 1:
            raise ValueError("skill_* lists must all have one entry per skill")
        # Build every section once so inconsistent values fail at load time
        self.dsfpo()
        self.skills()
        self.network()
        self.world()
        self.rewards()
        self.curriculum()
        return self

    # -- sections -----------------------------------------------------------

    def dsfpo(self) -> DsfPoConfig:
        return DsfPoConfig(
            algorithm=self.ppo_algorithm,
            clip=self.ppo_clip,
            gamma=self.ppo_gamma,
            gae_lambda=self.ppo_lambda,
            epochs=self.ppo_epochs,
            minibatches=self.ppo_minibatches,
            entropy_coef=self.ppo_entropy_coef,
            value_coef=self.ppo_value_coef,
            lr=self.ppo_lr,
            max_grad_norm=self.ppo_max_grad_norm,
            normalize_advantages=self.ppo_normalize_advantages,
        )

    def skills(self) -> SkillSet:
        specs = [
            SkillSpec(
                id=index + 1,
                kind=self.skill_kinds[index],
                command_dims=tuple(self.skill_command_dims[index]),
                kick_gain=self.skill_kick_gains[index],
                kick_cap=self.skill_kick_caps[index],
                max_speed=self.skill_max_speeds[index],
                roughness_sensitivity=self.skill_roughness_sensitivity[index],
            )
            for index in range(len(self.skill_kinds))
        ]
        return SkillSet(skills=tuple(specs), command_dim=self.command_dim)

    def network(self) -> NetworkConfig:
        return NetworkConfig(
            sfe_widths=tuple(self.net_sfe_widths),
            critic_widths=tuple(self.net_critic_widths),
            estimator_widths=tuple(self.net_estimator_widths),
            activation=self.net_activation,
            init_std=self.net_init_std,
            head_gain=self.net_head_gain,
            history_window=self.net_history_window,
        )

    def world(self) -> WorldConfig:
        prefix = "world_"
        values = {
            name[len(prefix):]: getattr(self, name)
            for name in type(self).model_fields
            if name.startswith(prefix)
        }
        return WorldConfig(**values)

    def rewards(self) -> RewardConfig:
        return RewardConfig(
            weights=self.reward_weights,
            delta_p=self.reward_delta_p,
            delta_psi=self.reward_delta_psi,
            delta_n=self.reward_delta_n,
            delta_v=self.reward_delta_v,
            d_max=self.reward_d_max,
            consistency_window=self.reward_consistency_window,
        )

    def curriculum(self) -> CurriculumConfig:
        return CurriculumConfig(
            command_range=self.curriculum_command_range,
            cell_size=self.curriculum_cell_size,
            initial_box=self.curriculum_initial_box,
            max_difficulty=self.curriculum_max_difficulty,
            initial_difficulties=tuple(self.curriculum_initial_difficulties),
            d_th1=self.curriculum_d_th1,
            d_th2=self.curriculum_d_th2,
            velocity_gate=self.curriculum_velocity_gate,
        )

    # -- identity -------------------------------------------------------------

    def behavior_dict(self) -> Dict[str, Any]:
        return self.model_dump(mode="json", exclude=RUNTIME_FIELDS)

    def config_hash(self) -> str:
        canonical = json.dumps(self.behavior_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def load_config(path: Optional[Path] = None, **overrides: Any) -> RunConfig:
    """Load a run config from ``path`` (optional) with ``overrides`` taking precedence.

    ``None`` overrides are ignored so unset command-line flags fall through to the file.
    """
    overrides = {key: value for key, value in overrides.items() if value is not None}
    if path is not None and not Path(path).is_file():
        raise ConfigError(f"Config file not found: {path}", details={"path": str(path)})
    try:
        return RunConfig(_env_file=str(path) if path is not None else None, **overrides)
    except ValidationError as exc:
        errors = [
            {"field": ".".join(str(loc) for loc in error["loc"]) or "<config>", "message": error["msg"]}
            for error in exc.errors()
        ]
        raise ConfigError("Configuration validation failed", details={"errors": errors}) from exc
