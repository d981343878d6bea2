import json
import math

import pytest

from skillfocus.core.exceptions import ConfigMismatchError, NonFiniteLossError, OutputDirectoryError
from skillfocus.services.checkpoint import load_checkpoint
from skillfocus.services.dsfpo import DsfPoTrainer
from skillfocus.services.trainer import CHECKPOINT_DIR, METRICS_FILE, TIMINGS_FILE, Trainer, config_from_checkpoint
from tests.conftest import tiny_config


def _lines(path):
    return path.read_text(encoding="utf-8").splitlines()


def test_identical_seeds_give_identical_logs(tmp_path):
    logs = []
    for name in ("a", "b"):
        Trainer(tiny_config(tmp_path / name, seed=11)).train()
        logs.append((tmp_path / name / METRICS_FILE).read_bytes())
    assert logs[0] == logs[1]


@pytest.mark.parametrize("workers", [2, 3])
def test_worker_count_does_not_change_metrics(tmp_path, workers):
    logs = []
    for n in (1, workers):
        run = tmp_path / f"w{n}"
        Trainer(tiny_config(run, seed=11, train_num_envs=4, train_num_workers=n)).train()
        logs.append((run / METRICS_FILE).read_bytes())
    assert logs[0] == logs[1]


def test_metrics_log_layout(trained_run):
    config, final = trained_run
    lines = [json.loads(line) for line in _lines(config.output_dir / METRICS_FILE)]
    assert lines[0]["kind"] == "header"
    assert lines[0]["config_hash"] == config.config_hash()
    assert [line["iteration"] for line in lines[1:]] == [0, 1]
    first = lines[1]
    for key in ("surrogate_loss", "value_loss", "entropy", "mean_ratio", "grad_norm", "estimator_mse"):
        assert math.isfinite(first[key])
    assert first["mean_ratio"] == pytest.approx(1.0, abs=0.5)
    assert sum(first["skill_usage"]) == pytest.approx(1.0)
    assert len(_lines(config.output_dir / TIMINGS_FILE)) == 2


def test_checkpoints_written(trained_run):
    config, final = trained_run
    assert final.name == "final.ckpt"
    assert (config.output_dir / CHECKPOINT_DIR / "iter_000001.ckpt").exists()
    checkpoint = load_checkpoint(final)
    assert checkpoint.iteration == 2
    assert checkpoint.estimator_frozen


def test_resume_matches_uninterrupted_run(tmp_path):
    Trainer(tiny_config(tmp_path / "straight", train_iterations=3)).train()

    first = Trainer(tiny_config(tmp_path / "resumed", train_iterations=1)).train()
    resumed = Trainer.from_checkpoint(first, tiny_config(tmp_path / "resumed", train_iterations=3))
    assert resumed.iteration == 1
    resumed.train()

    straight = load_checkpoint(tmp_path / "straight" / CHECKPOINT_DIR / "final.ckpt")
    again = load_checkpoint(tmp_path / "resumed" / CHECKPOINT_DIR / "final.ckpt")
    assert straight.params.bit_equal(again.params)
    assert straight.rng_states == again.rng_states
    assert (tmp_path / "straight" / METRICS_FILE).read_bytes() == (tmp_path / "resumed" / METRICS_FILE).read_bytes()


def test_resume_rejects_changed_behavior(trained_run, tmp_path):
    config, final = trained_run
    with pytest.raises(ConfigMismatchError) as info:
        Trainer.from_checkpoint(final, tiny_config(tmp_path, ppo_clip=0.3))
    assert info.value.field == "ppo_clip"


def test_config_recovered_from_checkpoint(trained_run, tmp_path):
    config, final = trained_run
    recovered = config_from_checkpoint(load_checkpoint(final), output_dir=tmp_path, seed=None)
    assert recovered.config_hash() == config.config_hash()
    assert recovered.output_dir == tmp_path


def test_unwritable_output_dir(tmp_path):
    blocker = tmp_path / "occupied"
    blocker.write_text("not a directory")
    with pytest.raises(OutputDirectoryError):
        Trainer(tiny_config(blocker)).train()


def test_ablation_runs_share_initial_weights(tmp_path):
    dsf = Trainer(tiny_config(tmp_path, ppo_algorithm="dsf_po"))
    ppo = Trainer(tiny_config(tmp_path, ppo_algorithm="standard_ppo"))
    assert dsf.params.bit_equal(ppo.params)
    assert dsf.rngs.state_dict() == ppo.rngs.state_dict()


def test_non_finite_loss_saves_abort_checkpoint(tmp_path, monkeypatch):
    def explode(self, params, buffer, optimizer, rng):
        raise NonFiniteLossError(details={"surrogate_loss": float("nan")})

    monkeypatch.setattr(DsfPoTrainer, "update", explode)
    trainer = Trainer(tiny_config(tmp_path))
    with pytest.raises(NonFiniteLossError):
        trainer.train()
    assert (tmp_path / CHECKPOINT_DIR / "abort.ckpt").exists()
    assert load_checkpoint(tmp_path / CHECKPOINT_DIR / "abort.ckpt").iteration == 0
