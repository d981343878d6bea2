"""The ``plot`` verb."""

import argparse
import logging
from pathlib import Path

from skillfocus.services.plots import emit_plots

logger = logging.getLogger(__name__)


def register(subparsers) -> argparse.ArgumentParser:
    parser = subparsers.add_parser("plot", help="Training curves and skill-usage heatmap")
    parser.add_argument("logs", nargs="+", type=Path, help="metrics.jsonl files, any number of seeds/algorithms")
    parser.add_argument("--out", type=Path, default=Path("plots"), help="Directory for SVG and CSV files")
    parser.add_argument("--summary", type=Path, default=None, help="Evaluation summary.json for the heatmap")
    parser.set_defaults(handler=run)
    return parser


def run(args: argparse.Namespace) -> int:
    result = emit_plots(args.logs, args.out, args.summary)
    if result.skipped:
        logger.warning(f"{result.skipped} malformed metrics lines skipped")
    for path in result.files:
        print(path)
    return 0
