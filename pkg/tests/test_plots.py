import csv
import logging

import numpy as np
import pytest

from skillfocus.core.exceptions import SkillFocusError
from skillfocus.models.schemas import EvaluationSummary, MetricsRecord, RunHeader
from skillfocus.services.plots import compute_band, emit_plots, plot_skill_usage, read_metrics_log


def _record(iteration, reward, length=50.0):
    return MetricsRecord(
        iteration=iteration,
        episodes=4,
        mean_reward=reward,
        mean_episode_length=length,
        surrogate_loss=0.0,
        value_loss=1.0,
        entropy=2.0,
        clip_fraction=0.1,
        mean_ratio=1.0,
        grad_norm=0.5,
        skill_usage=[0.25, 0.25, 0.25, 0.25],
        unlocked_command_fraction=0.11,
        unlocked_difficulty_fraction=0.33,
        estimator_mse=0.01,
    )


def _write_log(path, rewards, algorithm="dsf_po", seed=0, garbage=()):
    header = RunHeader(package_version="1.0.0", config_hash="x", algorithm=algorithm, seed=seed, config={})
    lines = [header.model_dump_json()]
    lines += [_record(i, r).model_dump_json() for i, r in enumerate(rewards)]
    lines += list(garbage)
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def test_band_matches_population_std(tmp_path, rng):
    curves = rng.normal(size=(5, 12))
    logs = [read_metrics_log(_write_log(tmp_path / f"s{i}.jsonl", curve, seed=i)) for i, curve in enumerate(curves)]
    band = compute_band("dsf_po", logs, "mean_reward")
    np.testing.assert_allclose(band.mean, curves.mean(axis=0), rtol=1e-12)
    np.testing.assert_allclose(band.std, np.std(curves, axis=0, ddof=0), rtol=1e-12)
    assert band.runs == 5


def test_single_run_has_zero_std(tmp_path):
    log = read_metrics_log(_write_log(tmp_path / "one.jsonl", [1.0, 2.0, 3.0]))
    band = compute_band("dsf_po", [log], "mean_reward")
    assert np.array_equal(band.std, np.zeros(3))


def test_unequal_runs_are_truncated(tmp_path, caplog):
    logs = [
        read_metrics_log(_write_log(tmp_path / "long.jsonl", [1.0] * 6)),
        read_metrics_log(_write_log(tmp_path / "short.jsonl", [3.0] * 4)),
    ]
    with caplog.at_level(logging.WARNING):
        band = compute_band("dsf_po", logs, "mean_reward")
    assert len(band.mean) == 4
    assert np.array_equal(band.mean, np.full(4, 2.0))
    assert "truncating" in caplog.text


def test_malformed_lines_are_counted(tmp_path):
    path = _write_log(tmp_path / "bad.jsonl", [1.0, 2.0], garbage=["{not json", '{"kind": "iteration"}'])
    log = read_metrics_log(path)
    assert len(log.records) == 2
    assert log.skipped == 2
    assert log.algorithm == "dsf_po"


def test_emit_plots_groups_by_algorithm(tmp_path):
    paths = [
        _write_log(tmp_path / "a0.jsonl", [1.0, 2.0]),
        _write_log(tmp_path / "a1.jsonl", [3.0, 4.0], seed=1),
        _write_log(tmp_path / "b0.jsonl", [0.0, 0.5], algorithm="standard_ppo"),
    ]
    result = emit_plots(paths, tmp_path / "plots")
    names = sorted(p.name for p in result.files)
    assert names == ["mean_episode_length.csv", "mean_episode_length.svg", "mean_reward.csv", "mean_reward.svg"]
    with open(tmp_path / "plots" / "mean_reward.csv", newline="") as handle:
        rows = list(csv.DictReader(handle))
    assert [row["algorithm"] for row in rows] == ["dsf_po", "dsf_po", "standard_ppo", "standard_ppo"]
    assert float(rows[0]["mean"]) == 2.0 and float(rows[0]["std"]) == 1.0
    assert rows[2]["runs"] == "1"


def test_no_parseable_logs(tmp_path):
    path = tmp_path / "empty.jsonl"
    path.write_text("garbage\n")
    with pytest.raises(SkillFocusError) as info:
        emit_plots([path], tmp_path / "plots")
    assert info.value.error_code == "NO_METRICS"


def test_skill_usage_heatmap(tmp_path):
    summary = EvaluationSummary(
        checkpoint="final.ckpt",
        episodes=3,
        deterministic=True,
        seed=0,
        terrains=["flat", "rough"],
        skill_usage=[[0.5, 0.5, 0.0, 0.0], None],
        skill_steps=[10, 0],
    )
    files = plot_skill_usage(summary, tmp_path)
    assert [p.name for p in files] == ["skill_usage.csv", "skill_usage.svg"]
    rows = (tmp_path / "skill_usage.csv").read_text().splitlines()
    assert rows[0] == "terrain,skill_1,skill_2,skill_3,skill_4"
    assert rows[2] == "rough,,,,"


def test_plots_from_a_real_run(trained_run, tmp_path):
    config, _ = trained_run
    result = emit_plots([config.output_dir / "metrics.jsonl"], tmp_path)
    assert result.skipped == 0
    assert all(path.exists() for path in result.files)
