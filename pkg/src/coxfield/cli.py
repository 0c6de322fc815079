"""``coxfield <mode> --config <path> [--seed N] [--out DIR]``.

Exit codes: 0 on success, 1 on configuration or data errors, 2 on numeric
failures.
"""
from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .config import MODES, load_run_config
from .errors import CoxFieldError


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="coxfield",
                                     description="Conditional log Gaussian Cox process fitting and simulation.")
    parser.add_argument("mode", choices=MODES)
    parser.add_argument("--config", required=True,
                        help="YAML file, ./configs/<name>.yaml or a bundled preset name")
    parser.add_argument("--seed", type=int, default=None, help="override chain.seed")
    parser.add_argument("--out", default=None, help="output directory (beats COXFIELD_OUTPUT_DIR)")
    parser.add_argument("--chain", default=None, help="chain file for the envelope mode")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    return parser


def configure_logging(verbose: bool = False):
    # robot.api.logger forwards to the "RobotFramework" logger outside a Robot run
    logging.basicConfig(level=logging.DEBUG if verbose else logging.INFO,
                        format="%(asctime)s %(levelname)s %(message)s", stream=sys.stderr)
    logging.getLogger("RobotFramework").setLevel(logging.DEBUG if verbose else logging.INFO)


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging(args.verbose)
    # deferred so that --help stays fast
    from .commands import run_command

    try:
        cfg = load_run_config(args.config, seed=args.seed, out=args.out, mode=args.mode)
        if args.chain is not None:
            cfg = replace(cfg, envelope=replace(cfg.envelope, chain=Path(args.chain)))
        collector = run_command(cfg)
    except CoxFieldError as e:
        print(f"coxfield: {type(e).__name__}: {e}", file=sys.stderr)
        return e.exit_code
    print(f"coxfield: {len(collector.entries)} file(s) written to {collector.root}")
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
