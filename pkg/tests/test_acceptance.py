"""Desk-scale ablation; hours of CPU time, run with ``pytest -m slow``."""

from pathlib import Path

import numpy as np
import pytest

from skillfocus.config import load_config
from skillfocus.services.evaluation import evaluate
from skillfocus.services.plots import compute_band, read_metrics_log
from skillfocus.services.trainer import METRICS_FILE, Trainer

DESK = Path(__file__).parent.parent / "configs" / "desk.env"
SEEDS = range(5)

pytestmark = pytest.mark.slow


@pytest.fixture(scope="module")
def ablation(tmp_path_factory):
    root = tmp_path_factory.mktemp("ablation")
    finals = {}
    for algorithm in ("dsf_po", "standard_ppo"):
        for seed in SEEDS:
            out = root / f"{algorithm}_{seed}"
            finals[algorithm, seed] = Trainer(load_config(DESK, ppo_algorithm=algorithm, seed=seed, output_dir=out)).train()
    return root, finals


def _tail_mean(root, algorithm, metric, tail=50):
    logs = [read_metrics_log(root / f"{algorithm}_{seed}" / METRICS_FILE) for seed in SEEDS]
    band = compute_band(algorithm, logs, metric)
    return float(np.nanmean(band.mean[-tail:]))


def test_skill_focus_beats_plain_ppo(ablation):
    root, _ = ablation
    for metric in ("mean_reward", "mean_episode_length"):
        assert _tail_mean(root, "dsf_po", metric) >= _tail_mean(root, "standard_ppo", metric)


def test_trained_policy_dribbles_on_flat_ground(ablation, tmp_path):
    _, finals = ablation
    config = load_config(
        DESK, seed=0, output_dir=tmp_path, eval_start_zone="flat", eval_difficulty=0, eval_episodes=50
    )
    summary = evaluate(finals["dsf_po", 0], config)
    flat = summary.skill_usage[0]
    assert abs(sum(flat) - 1.0) < 1e-12
    assert flat[0] + flat[1] >= 0.5
