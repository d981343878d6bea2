"""Command-line application factory."""

import argparse
import logging
import sys
from typing import List, Optional

from skillfocus import __version__
from skillfocus.commands import register_eval, register_inspect, register_plot, register_train
from skillfocus.core.exceptions import handle_cli_error

logger = logging.getLogger(__name__)

LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"


def create_parser() -> argparse.ArgumentParser:
    """
    Build the ``skillfocus`` argument parser.

    Returns:
        Parser with the ``train``, ``eval``, ``plot`` and ``inspect-checkpoint`` verbs.
    """
    parser = argparse.ArgumentParser(
        prog="skillfocus",
        description="Skill-focused hierarchical policy optimization for a ball-dribbling simulator",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument(
        "--log-level", default=None, choices=["DEBUG", "INFO", "WARNING", "ERROR"], help="Overrides LOG_LEVEL"
    )
    subparsers = parser.add_subparsers(dest="verb", required=True)

    register_train(subparsers)
    register_eval(subparsers)
    register_plot(subparsers)
    register_inspect(subparsers)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = create_parser().parse_args(argv)
    logging.basicConfig(level=args.log_level or "INFO", format=LOG_FORMAT)
    try:
        return args.handler(args)
    except KeyboardInterrupt:
        logger.info("Interrupted")
        return 130
    except Exception as exc:  # noqa: BLE001
        return handle_cli_error(exc)


if __name__ == "__main__":
    sys.exit(main())
