"""Flags shared by the run-configuring verbs."""

import argparse
import json
import logging
from pathlib import Path
from typing import Any, Dict, Tuple

from skillfocus.config import RunConfig


def _assignment(text: str) -> Tuple[str, Any]:
    """Parse ``KEY=VALUE``; the value is read as JSON when it parses, else kept as a string."""
    key, sep, raw = text.partition("=")
    key = key.strip().lower()
    if not sep or not key:
        raise argparse.ArgumentTypeError(f"expected KEY=VALUE, got '{text}'")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key, value


def add_run_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=Path, default=None, help="Key-value config file (KEY=value per line)")
    parser.add_argument("--seed", type=int, default=None, help="Root seed for every random stream")
    parser.add_argument("--out", type=Path, default=None, help="Output directory")
    parser.add_argument("--checkpoint", type=Path, default=None, help="Checkpoint to resume or evaluate")
    parser.add_argument(
        "--set",
        dest="assignments",
        action="append",
        type=_assignment,
        default=[],
        metavar="KEY=VALUE",
        help="Override one config field, e.g. --set ppo_clip=0.3 (repeatable)",
    )


def run_overrides(args: argparse.Namespace, **flags: Any) -> Dict[str, Any]:
    """Config overrides from the command line.

    ``--set`` assignments apply first and dedicated flags (``--seed``, ``--out``
    and the verb's own ``flags``) win over them; unset flags are ``None`` and
    fall through to the file.
    """
    overrides: Dict[str, Any] = dict(getattr(args, "assignments", None) or [])
    dedicated = {"seed": args.seed, "output_dir": args.out, **flags}
    overrides.update({key: value for key, value in dedicated.items() if value is not None})
    return overrides


def apply_log_level(args: argparse.Namespace, config: RunConfig) -> None:
    """Use the config's ``log_level`` unless ``--log-level`` was given."""
    if getattr(args, "log_level", None) is None:
        logging.getLogger().setLevel(config.log_level.upper())
