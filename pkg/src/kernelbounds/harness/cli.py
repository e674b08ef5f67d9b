"""Command-line entry point: ``kernelbounds <command> --config run.ini``."""
from __future__ import annotations

import argparse
import sys

from .commands import COMMANDS, EXIT_HYPOTHESIS, MODES, run
from .config import ConfigError, load_config


def build_parser():
    ap = argparse.ArgumentParser(prog="kernelbounds",
                                 description="Kernel and gradient bound toolkit.")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", required=True, help="INI run configuration")
        sp.add_argument("--out", default="out", help="output directory")
        sp.add_argument("--mode", choices=MODES, default="measured",
                        help="source of c1..c12")
        sp.add_argument("--dry-run", action="store_true")
        if name == "constants":
            sp.add_argument("--t", type=float, default=None, help="window anchor time")
        if name == "approx":
            sp.add_argument("--n", type=float, nargs="+", default=None, help="cutoff levels")
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_HYPOTHESIS
    extra = {}
    if args.command == "constants":
        extra["t"] = args.t
    if args.command == "approx":
        extra["ns"] = args.n
    return run(args.command, cfg, args.out, mode=args.mode, dry_run=args.dry_run, **extra)


if __name__ == "__main__":
    sys.exit(main())
