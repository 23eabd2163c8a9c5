"""Command-line front end.

Usage::

    python -m latentdecode {extract,fit,decode,evaluate,roi,synthetic} --config FILE
        [--output DIR] [--threads N] [--verbose]

On success one line ``ok command=... manifest=... output=...`` goes to
stdout. On failure one line ``error: kind=... message=...`` goes to stderr
and the exit code tells the category: 2 configuration, 3 data, 4 numerics.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
from typing import Optional, Sequence

from .config import load_config
from .errors import ConfigError, IoFailure, LatentDecodeError
from .experiment import COMMANDS, run_command

ENV_THREADS = "LATENTDECODE_THREADS"


def _default_threads() -> int:
    env = os.environ.get(ENV_THREADS)
    if env:
        try:
            n = int(env)
        except ValueError:
            raise ConfigError(f"{ENV_THREADS}={env!r} is not an integer") from None
        if n < 1:
            raise ConfigError(f"{ENV_THREADS} must be >= 1")
        return n
    return os.cpu_count() or 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="latentdecode",
        description="Latent extraction, brain decoding and reconstruction experiments.",
    )
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")
    helps = {
        "extract": "invert training images into (h, z, d) latents",
        "fit": "fit the three ridge decoders",
        "decode": "decode test responses and render every variant",
        "evaluate": "score reconstructions against ground truth",
        "roi": "weight maps and ROI-maximization images",
        "synthetic": "closed-loop run on a synthetic brain (all steps)",
    }
    for name in COMMANDS:
        p = sub.add_parser(name, help=helps[name])
        p.add_argument("--config", required=True, help="experiment config (INI)")
        p.add_argument("--output", help="output directory (overrides [output] dir)")
        p.add_argument("--threads", type=int, help=f"worker threads (default ${ENV_THREADS} or all cores)")
        p.add_argument("--verbose", action="store_true", help="log progress to stderr")
    return parser


def _one_line(text: str) -> str:
    return " ".join(str(text).split())


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        threads = args.threads if args.threads is not None else _default_threads()
        if threads < 1:
            raise ConfigError("--threads must be >= 1")
        cfg = load_config(args.config)
        report = run_command(args.command, cfg, output_dir=args.output, threads=threads)
    except LatentDecodeError as exc:
        print(f"error: kind={type(exc).__name__} message={_one_line(exc)}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: kind=IoFailure message={_one_line(exc)}", file=sys.stderr)
        return IoFailure.exit_code
    except KeyboardInterrupt:
        print("error: kind=Interrupted message=interrupted", file=sys.stderr)
        return 130
    print(f"ok command={args.command} manifest={report.manifest_hash} output={report.output_dir}")
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
