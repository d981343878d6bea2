"""The ``train`` verb: fresh runs and resumption from a checkpoint."""

import argparse
import logging

from skillfocus.commands.options import add_run_flags, apply_log_level, run_overrides
from skillfocus.config import load_config
from skillfocus.services.checkpoint import load_checkpoint
from skillfocus.services.trainer import Trainer, config_from_checkpoint

logger = logging.getLogger(__name__)


def register(subparsers) -> argparse.ArgumentParser:
    parser = subparsers.add_parser("train", help="Train a hierarchical policy")
    add_run_flags(parser)
    parser.add_argument("--algo", choices=["dsf_po", "standard_ppo"], default=None, help="Policy update rule")
    parser.add_argument("--iterations", type=int, default=None, help="Total training iterations to reach")
    parser.set_defaults(handler=run)
    return parser


def run(args: argparse.Namespace) -> int:
    """
    Train from scratch, or resume when ``--checkpoint`` is given.

    Without ``--config`` a resumed run reuses the checkpoint's configuration;
    any flag that changes behavior is still checked against it.
    """
    overrides = run_overrides(args, ppo_algorithm=args.algo, train_iterations=args.iterations)

    if args.checkpoint is None:
        config = load_config(args.config, **overrides)
        trainer = Trainer(config)
    else:
        if args.config is not None:
            config = load_config(args.config, **overrides)
        else:
            config = config_from_checkpoint(load_checkpoint(args.checkpoint), **overrides)
        trainer = Trainer.from_checkpoint(args.checkpoint, config)

    apply_log_level(args, config)
    final = trainer.train()
    print(final)
    return 0
