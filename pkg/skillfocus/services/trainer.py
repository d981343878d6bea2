"""Seeded end-to-end training loop: collect, advantages, update, curriculum."""

from __future__ import annotations

import logging
import time
from pathlib import Path
from typing import Any, Iterable, List, Mapping, Optional

import numpy as np

from skillfocus import __version__
from skillfocus.config import RUNTIME_FIELDS, RunConfig, load_config
from skillfocus.core.exceptions import ConfigMismatchError, NonFiniteLossError, OutputDirectoryError
from skillfocus.core.optim import init_optimizer
from skillfocus.core.rng import RngStreams
from skillfocus.models.schemas import MetricsRecord, RunHeader, TimingRecord
from skillfocus.services import curriculum
from skillfocus.services.checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from skillfocus.services.collector import Collector, Rollout
from skillfocus.services.dsfpo import DsfPoTrainer
from skillfocus.services.policy import HierarchicalPolicy
from skillfocus.services.world import DribbleWorld

logger = logging.getLogger(__name__)

METRICS_FILE = "metrics.jsonl"
TIMINGS_FILE = "timings.jsonl"
CHECKPOINT_DIR = "checkpoints"


def prepare_output_dir(path: Path) -> Path:
    path = Path(path)
    try:
        path.mkdir(parents=True, exist_ok=True)
        marker = path / ".write_test"
        marker.write_text("")
        marker.unlink()
    except OSError as exc:
        raise OutputDirectoryError(f"Output directory {path} is not writable: {exc}", details={"path": str(path)}) from exc
    return path


def check_config(saved: Mapping[str, Any], config: RunConfig, ignore: Iterable[str] = ()) -> None:
    """Raise :class:`ConfigMismatchError` on the first behavior field that differs."""
    current = config.behavior_dict()
    skipped = RUNTIME_FIELDS | set(ignore)
    for key in sorted(set(saved) | set(current)):
        if key in skipped:
            continue
        if saved.get(key) != current.get(key):
            raise ConfigMismatchError(key, saved.get(key), current.get(key))


def config_from_checkpoint(checkpoint: Checkpoint, **runtime: Any) -> RunConfig:
    values = {key: value for key, value in checkpoint.config.items() if key not in RUNTIME_FIELDS}
    values.update({key: value for key, value in runtime.items() if value is not None})
    return load_config(None, **values)


class Trainer:
    """Owns the parameters, optimizers, curriculum and generators of one run.

    Network initialization draws from the ``init`` stream before the algorithm
    is looked at, so runs that differ only in ``ppo_algorithm`` start from the
    same weights and see the same environment seeds.
    """

    def __init__(self, config: RunConfig, output_dir: Optional[Path] = None):
        self.config = config
        self.output_dir = Path(output_dir or config.output_dir)
        self.rngs = RngStreams(config.seed)
        network = config.network()
        skills = config.skills()
        self.policy = HierarchicalPolicy(network, skills)
        self.params = self.policy.init_params(self.rngs.get("init"))

        self.dsfpo = DsfPoTrainer(self.policy, config.dsfpo())
        self.optimizer = self.dsfpo.init_optimizer(self.params)
        self.estimator_optimizer = init_optimizer(
            self.params, self.policy.estimator_names(self.params), lr=config.train_estimator_lr
        )
        self.grid = curriculum.init_grid(config.curriculum())
        self.world = DribbleWorld(
            config.world(), skills, config.rewards(), network.history_window, network.context_dim
        )
        self.collector = Collector(
            self.world,
            self.policy,
            self.rngs,
            config.train_num_envs,
            config.train_horizon,
            config.train_num_workers,
            gamma=config.ppo_gamma,
            lam=config.ppo_lambda,
        )
        self.iteration = 0
        self.estimator_frozen = config.train_estimator_pretrain_iterations == 0

    @classmethod
    def from_checkpoint(cls, path: Path, config: RunConfig, output_dir: Optional[Path] = None) -> "Trainer":
        trainer = cls(config, output_dir)
        checkpoint = load_checkpoint(path, trainer.params.shapes())
        check_config(checkpoint.config, config)
        trainer.params = checkpoint.params
        if checkpoint.optimizer is not None:
            trainer.optimizer = checkpoint.optimizer
        if checkpoint.estimator_optimizer is not None:
            trainer.estimator_optimizer = checkpoint.estimator_optimizer
        if checkpoint.command_weights is not None and checkpoint.difficulty_weights is not None:
            trainer.grid = curriculum.load_grid(
                config.curriculum(), checkpoint.command_weights, checkpoint.difficulty_weights
            )
        trainer.rngs.load_state_dict(checkpoint.rng_states)
        trainer.iteration = checkpoint.iteration
        trainer.estimator_frozen = checkpoint.estimator_frozen
        logger.info(f"Resumed from {path} at iteration {trainer.iteration}")
        return trainer

    # -- persistence ----------------------------------------------------------

    def checkpoint(self) -> Checkpoint:
        return Checkpoint(
            params=self.params,
            config=self.config.behavior_dict(),
            config_hash=self.config.config_hash(),
            iteration=self.iteration,
            optimizer=self.optimizer,
            estimator_optimizer=self.estimator_optimizer,
            command_weights=self.grid.command_weights,
            difficulty_weights=self.grid.difficulty_weights,
            curriculum=self.grid.thresholds(),
            rng_states=self.rngs.state_dict(),
            estimator_frozen=self.estimator_frozen,
        )

    def save(self, name: str) -> Path:
        return save_checkpoint(self.checkpoint(), self.output_dir / CHECKPOINT_DIR / name)

    def _append(self, filename: str, line: str) -> None:
        with open(self.output_dir / filename, "a", encoding="utf-8") as handle:
            handle.write(line + "\n")

    def _write_header(self) -> None:
        metrics = self.output_dir / METRICS_FILE
        if metrics.exists() and metrics.stat().st_size > 0:
            return
        header = RunHeader(
            package_version=__version__,
            config_hash=self.config.config_hash(),
            algorithm=self.config.ppo_algorithm,
            seed=self.config.seed,
            config=self.config.behavior_dict(),
        )
        self._append(METRICS_FILE, header.model_dump_json())

    # -- phases -----------------------------------------------------------------

    def estimator(self):
        params = self.params
        return lambda histories: self.policy.estimator_forward(params, histories)

    def pretrain_estimator(self) -> List[float]:
        """Fit the context estimator on simulator ground truth, then freeze it."""
        config = self.config
        rng = self.rngs.get("estimator")
        losses: List[float] = []
        for index in range(config.train_estimator_pretrain_iterations):
            rollout = self.collector.collect(self.params, self.grid, self.estimator())
            buffer = rollout.buffer
            histories = buffer.histories.reshape((-1,) + buffer.histories.shape[2:])
            contexts = buffer.contexts.reshape(-1, buffer.contexts.shape[-1])
            chunks = max(1, len(histories) // config.train_estimator_minibatch)
            epoch_losses = []
            for _ in range(config.train_estimator_epochs):
                for chunk in np.array_split(rng.permutation(len(histories)), chunks):
                    self.params, self.estimator_optimizer, loss = self.policy.estimator_update(
                        self.params, histories[chunk], contexts[chunk], self.estimator_optimizer
                    )
                    epoch_losses.append(loss)
            if epoch_losses:
                losses.append(float(np.mean(epoch_losses)))
                logger.info(f"Estimator pre-training round {index}: mse={losses[-1]:.5f}")
        self.estimator_frozen = True
        return losses

    def _metrics(self, rollout: Rollout, stats, estimator_mse: float) -> MetricsRecord:
        rewards, lengths = rollout.episode_rewards, rollout.episode_lengths
        return MetricsRecord(
            iteration=self.iteration,
            episodes=len(rewards),
            mean_reward=float(np.mean(rewards)) if rewards else None,
            mean_episode_length=float(np.mean(lengths)) if lengths else None,
            surrogate_loss=stats.surrogate_loss,
            value_loss=stats.value_loss,
            entropy=stats.entropy,
            clip_fraction=stats.clip_fraction,
            mean_ratio=stats.mean_ratio,
            grad_norm=stats.grad_norm,
            skill_usage=rollout.skill_usage(self.policy.layout.num_skills),
            unlocked_command_fraction=self.grid.unlocked_command_fraction(),
            unlocked_difficulty_fraction=self.grid.unlocked_difficulty_fraction(),
            estimator_mse=estimator_mse,
        )

    def run_iteration(self) -> MetricsRecord:
        started = time.perf_counter()
        rollout = self.collector.collect(self.params, self.grid, self.estimator())
        buffer = rollout.buffer
        estimator_mse = self.policy.estimator_loss(
            self.params,
            buffer.histories.reshape((-1,) + buffer.histories.shape[2:]),
            buffer.contexts.reshape(-1, buffer.contexts.shape[-1]),
        )
        collected = time.perf_counter()

        try:
            self.params, self.optimizer, stats = self.dsfpo.update(
                self.params, buffer, self.optimizer, self.rngs.get("minibatch")
            )
        except NonFiniteLossError:
            path = self.save("abort.ckpt")
            logger.error(f"Non-finite loss at iteration {self.iteration}; state saved to {path}")
            raise

        for outcome in rollout.outcomes:
            self.grid = curriculum.update(self.grid, outcome)
        record = self._metrics(rollout, stats, estimator_mse)
        finished = time.perf_counter()

        self._append(METRICS_FILE, record.model_dump_json())
        timing = TimingRecord(
            iteration=self.iteration,
            wall_clock=time.time(),
            collect_seconds=collected - started,
            update_seconds=finished - collected,
        )
        self._append(TIMINGS_FILE, timing.model_dump_json())
        logger.info(
            f"iter {self.iteration}: reward={record.mean_reward} length={record.mean_episode_length} "
            f"ratio={record.mean_ratio:.4f} clip={record.clip_fraction:.3f} "
            f"cmd_unlocked={record.unlocked_command_fraction:.3f}"
        )
        self.iteration += 1
        return record

    def train(self, iterations: Optional[int] = None) -> Path:
        """Train until ``iterations`` iterations in total have completed; return the final checkpoint."""
        target = self.config.train_iterations if iterations is None else iterations
        prepare_output_dir(self.output_dir)
        self._write_header()
        logger.info(
            f"Training {self.config.ppo_algorithm} seed={self.config.seed} "
            f"config_hash={self.config.config_hash()[:12]} from iteration {self.iteration} to {target}"
        )
        try:
            if not self.estimator_frozen:
                self.pretrain_estimator()
            every = self.config.train_checkpoint_every
            while self.iteration < target:
                self.run_iteration()
                if every and self.iteration % every == 0 and self.iteration < target:
                    self.save(f"iter_{self.iteration:06d}.ckpt")
            return self.save("final.ckpt")
        finally:
            self.collector.close()


def train(config: RunConfig, output_dir: Optional[Path] = None) -> Path:
    return Trainer(config, output_dir).train()


def resume(checkpoint_path: Path, config: RunConfig, output_dir: Optional[Path] = None) -> Path:
    return Trainer.from_checkpoint(checkpoint_path, config, output_dir).train()
