"""The ``eval`` verb."""

import argparse
import json
import logging

from skillfocus.commands.options import add_run_flags, apply_log_level, run_overrides
from skillfocus.config import load_config
from skillfocus.core.exceptions import ConfigError
from skillfocus.services.checkpoint import load_checkpoint
from skillfocus.services.evaluation import evaluate
from skillfocus.services.trainer import config_from_checkpoint

logger = logging.getLogger(__name__)


def _command(text: str):
    try:
        return [float(part) for part in text.split(",")]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from exc


def register(subparsers) -> argparse.ArgumentParser:
    parser = subparsers.add_parser("eval", help="Evaluate a checkpointed policy")
    add_run_flags(parser)
    parser.add_argument("--episodes", type=int, default=None, help="Number of evaluation episodes")
    parser.add_argument("--deterministic", action="store_true", help="Argmax skill and mean command")
    parser.add_argument("--command", type=_command, default=None, help="Fixed user command, e.g. 1.0,0.0")
    parser.add_argument("--difficulty", type=int, default=None, help="Fixed terrain difficulty")
    parser.add_argument("--start-zone", default=None, help="Fixed start zone kind")
    parser.set_defaults(handler=run)
    return parser


def run(args: argparse.Namespace) -> int:
    if args.checkpoint is None:
        raise ConfigError("eval requires --checkpoint", details={"flag": "--checkpoint"})
    overrides = run_overrides(
        args,
        eval_episodes=args.episodes,
        eval_deterministic=True if args.deterministic else None,
        eval_command=args.command,
        eval_difficulty=args.difficulty,
        eval_start_zone=args.start_zone,
    )
    if args.config is not None:
        config = load_config(args.config, **overrides)
    else:
        config = config_from_checkpoint(load_checkpoint(args.checkpoint), **overrides)

    apply_log_level(args, config)
    summary = evaluate(args.checkpoint, config)
    print(json.dumps(summary.model_dump(), indent=2))
    return 0
