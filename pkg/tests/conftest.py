"""Shared fixtures: a small network, seeded generators and throwaway output directories."""

from pathlib import Path

import numpy as np
import pytest

from skillfocus.config import RunConfig
from skillfocus.core.autodiff import gaussian_log_density
from skillfocus.services.policy import HierarchicalPolicy, PolicyRecord
from skillfocus.services.world import DribbleWorld

SMALL_NET = {
    "net_sfe_widths": [16, 16],
    "net_critic_widths": [16],
    "net_estimator_widths": [16],
}

TINY_RUN = {
    **SMALL_NET,
    "train_num_envs": 2,
    "train_horizon": 6,
    "train_iterations": 2,
    "train_checkpoint_every": 1,
    "train_estimator_pretrain_iterations": 1,
    "train_estimator_epochs": 2,
    "train_estimator_minibatch": 4,
    "ppo_epochs": 2,
    "ppo_minibatches": 2,
    "world_episode_steps": 5,
    "eval_episodes": 2,
}


def make_config(**overrides) -> RunConfig:
    values = dict(SMALL_NET)
    values.update(overrides)
    return RunConfig(**values)


def tiny_config(output_dir: Path, **overrides) -> RunConfig:
    values = dict(TINY_RUN, output_dir=output_dir)
    values.update(overrides)
    return RunConfig(**values)


def record_for(policy: HierarchicalPolicy, params, obs, skills, commands) -> PolicyRecord:
    """Old-policy record of given actions evaluated under ``params``."""
    skills = np.asarray(skills, dtype=int)
    commands = np.asarray(commands, dtype=np.float64)
    base = PolicyRecord(skills=skills, commands=commands)
    log_prob_index, per_skill = policy.log_prob(params, obs, base)
    _, mean, w = policy.actor_forward(params, obs)
    joint = gaussian_log_density(commands, mean, params["command_log_std"]).sum(axis=1)
    return PolicyRecord(
        skills=skills,
        commands=commands,
        log_prob_index=log_prob_index,
        log_prob_command_per_skill=per_skill,
        log_prob_command_joint=joint,
        skill_focus_weights=w,
    )


@pytest.fixture
def config() -> RunConfig:
    return make_config()


@pytest.fixture
def policy(config) -> HierarchicalPolicy:
    return HierarchicalPolicy(config.network(), config.skills())


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


@pytest.fixture
def params(policy, rng):
    return policy.init_params(rng)


@pytest.fixture
def world(config) -> DribbleWorld:
    network = config.network()
    return DribbleWorld(config.world(), config.skills(), config.rewards(), network.history_window, network.context_dim)


@pytest.fixture
def out_dir(tmp_path) -> Path:
    path = tmp_path / "run"
    path.mkdir()
    return path


@pytest.fixture(scope="session")
def trained_run(tmp_path_factory):
    """A finished two-iteration run shared by the evaluation, plotting and CLI tests."""
    from skillfocus.services.trainer import Trainer

    output_dir = tmp_path_factory.mktemp("trained")
    config = tiny_config(output_dir)
    final = Trainer(config).train()
    return config, final
