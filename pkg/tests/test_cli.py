import json

import pytest

from skillfocus.main import create_parser, main
from tests.conftest import TINY_RUN


def _config_file(tmp_path, **extra):
    values = dict(TINY_RUN, **extra)
    lines = [f"{key.upper()}={json.dumps(value)}" for key, value in values.items()]
    path = tmp_path / "tiny.env"
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def test_verbs_are_registered():
    parser = create_parser()
    for argv in (["train"], ["eval"], ["plot", "m.jsonl"], ["inspect-checkpoint", "x.ckpt"]):
        assert parser.parse_args(argv).handler is not None


def test_missing_verb_is_a_usage_error():
    with pytest.raises(SystemExit) as info:
        main([])
    assert info.value.code == 2


def test_train_from_config_file(tmp_path, capsys):
    config = _config_file(tmp_path, train_iterations=1)
    status = main(["train", "--config", str(config), "--seed", "3", "--out", str(tmp_path / "run")])
    assert status == 0
    assert capsys.readouterr().out.strip().endswith("final.ckpt")
    assert (tmp_path / "run" / "metrics.jsonl").exists()


def test_eval_requires_checkpoint(capsys):
    assert main(["eval"]) == 2
    error = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert error["error_code"] == "CONFIG_INVALID"
    assert error["details"] == {"flag": "--checkpoint"}


def test_set_overrides_config_file(tmp_path):
    config = _config_file(tmp_path, train_iterations=1, ppo_clip=0.1)
    argv = ["train", "--config", str(config), "--out", str(tmp_path / "run")]
    argv += ["--set", "ppo_clip=0.3", "--set", "SEED=5", "--set", "ppo_algorithm=standard_ppo", "--seed", "9"]
    assert main(argv) == 0
    header = json.loads((tmp_path / "run" / "metrics.jsonl").read_text(encoding="utf-8").splitlines()[0])
    assert header["config"]["ppo_clip"] == 0.3
    assert header["algorithm"] == "standard_ppo"
    assert header["seed"] == 9


def test_set_unknown_field_is_rejected(tmp_path, capsys):
    status = main(["train", "--out", str(tmp_path / "run"), "--set", "ppo_clipp=0.3"])
    assert status == 2
    error = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert error["error_code"] == "CONFIG_INVALID"
    assert [e["field"] for e in error["details"]["errors"]] == ["ppo_clipp"]


def test_set_needs_key_and_value():
    with pytest.raises(SystemExit) as info:
        create_parser().parse_args(["train", "--set", "ppo_clip"])
    assert info.value.code == 2


def test_set_values_are_read_as_json():
    args = create_parser().parse_args(["train", "--set", "net_sfe_widths=[8,8]", "--set", "eval_start_zone=rough"])
    assert args.assignments == [("net_sfe_widths", [8, 8]), ("eval_start_zone", "rough")]


def test_eval_prints_summary(trained_run, tmp_path, capsys):
    _, final = trained_run
    status = main(["eval", "--checkpoint", str(final), "--episodes", "1", "--deterministic", "--out", str(tmp_path)])
    assert status == 0
    summary = json.loads(capsys.readouterr().out)
    assert summary["episodes"] == 1 and summary["deterministic"]


def test_inspect_checkpoint(trained_run, capsys):
    _, final = trained_run
    assert main(["inspect-checkpoint", str(final)]) == 0
    header = json.loads(capsys.readouterr().out)
    assert header["format_version"] == 1
    assert header["iteration"] == 2
    assert header["array_count"] > 0


def test_corrupt_checkpoint_exit_status(tmp_path, capsys):
    path = tmp_path / "broken.ckpt"
    path.write_bytes(b"garbage")
    assert main(["inspect-checkpoint", str(path)]) == 2
    assert "CHECKPOINT_CORRUPT" in capsys.readouterr().err


def test_resume_with_changed_flag_is_rejected(trained_run, tmp_path, capsys):
    _, final = trained_run
    config = _config_file(tmp_path, ppo_clip=0.3)
    status = main(["train", "--config", str(config), "--checkpoint", str(final), "--out", str(tmp_path / "r")])
    assert status == 2
    assert "CONFIG_MISMATCH" in capsys.readouterr().err
