"""The ``inspect-checkpoint`` verb: print a checkpoint header without loading the payload."""

import argparse
import json
from pathlib import Path

from skillfocus.services.checkpoint import read_header


def register(subparsers) -> argparse.ArgumentParser:
    parser = subparsers.add_parser("inspect-checkpoint", help="Show a checkpoint's header")
    parser.add_argument("checkpoint", type=Path)
    parser.add_argument("--arrays", action="store_true", help="Also list every stored array")
    parser.set_defaults(handler=run)
    return parser


def run(args: argparse.Namespace) -> int:
    header, _ = read_header(args.checkpoint)
    payload = header.model_dump(exclude={"arrays"} if not args.arrays else None)
    payload["array_count"] = len(header.arrays)
    print(json.dumps(payload, indent=2, default=str))
    return 0
