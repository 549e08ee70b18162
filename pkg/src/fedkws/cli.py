"""Command-line entry point: ``fedkws {generate,run,landscape,alloc-table}``."""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace

from .errors import FedKWSError
from .experiment import cmd_alloc_table, cmd_generate, cmd_landscape, cmd_run, load_spec

log = logging.getLogger("fedkws")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fedkws", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("generate", "generate and export a synthetic federation"),
        ("run", "run federated training for one or more seeds"),
        ("landscape", "evaluate a 2-D interpolation landscape"),
        ("alloc-table", "export the adaptive local-training allocation"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--spec", help="JSON spec file (defaults apply when omitted)")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, help="override the training seed")
        p.add_argument("--repeat", type=int, help="number of consecutive seeds to run")
        p.add_argument("--threads", type=int, help="worker threads for client updates")
    return parser


def _apply_flags(spec, args):
    if args.seed is not None:
        spec.fed = replace(spec.fed, seed=args.seed)
    if args.repeat is not None:
        spec.repeat = args.repeat
    if args.threads is not None:
        spec.threads = args.threads
    spec.__post_init__()
    return spec


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    args = build_parser().parse_args(argv)
    try:
        spec = _apply_flags(load_spec(args.spec), args)
        if args.command == "generate":
            path = cmd_generate(spec, args.out)
            log.info("wrote federation to %s", path)
        elif args.command == "run":
            summary = cmd_run(spec, args.out, log=log.info)
            log.info("final-5 accuracy %.4f +- %.4f", summary["final5_mean"], summary["final5_std"])
        elif args.command == "landscape":
            cmd_landscape(spec, args.out, log=log.info)
        elif args.command == "alloc-table":
            path = cmd_alloc_table(spec, args.out)
            log.info("wrote %s", path)
    except (FedKWSError, OSError) as exc:
        print(f"fedkws {args.command}: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
