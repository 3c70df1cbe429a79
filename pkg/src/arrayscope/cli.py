"""Command-line entry point.

One subcommand per pipeline mode. Every run prints a JSON summary on
stdout; with ``--out`` it also writes artifacts plus a manifest. Exit
codes: 0 success, 2 configuration error, 3 domain/geometry error,
4 processing error, 5 I/O error, 1 anything else.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import __version__
from .errors import ConfigError, DisconnectedArrayError
from .pipeline import MODES, run, validate_config
from .presets import preset_names

EXIT_OK = 0
EXIT_UNEXPECTED = 1
EXIT_CONFIG = 2
EXIT_DOMAIN = 3
EXIT_PROCESSING = 4
EXIT_IO = 5


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="arrayscope",
        description="Design calculator, synthetic imaging simulator and "
                    "reconstruction pipeline for planar camera-array "
                    "microscopes.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="mode", metavar="|".join(MODES))

    for mode in MODES:
        p = sub.add_parser(mode, help=f"run the {mode} mode")
        p.add_argument("--config", type=Path, default=None,
                       help="JSON run configuration file")
        p.add_argument("--preset", choices=preset_names(), default=None,
                       help="named array configuration")
        p.add_argument("--out", type=Path, default=None,
                       help="output directory (manifest written last)")
        p.add_argument("--seed", type=int, default=None,
                       help="RNG seed; required for rendering modes")
        p.add_argument("--overlap", type=float, default=None,
                       help="snapshot/tile overlap fraction (default 0.1)")
        p.add_argument("--binning", type=int, default=None,
                       help="pixel binning factor (default 1)")
        p.add_argument("--efficiency", type=float, default=None,
                       help="data-path efficiency factor in (0, 1]")
        p.add_argument("--threads", type=int, default=None,
                       help="render worker threads; 0 = auto (default 1)")
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.mode is None:
        parser.print_help()
        return EXIT_CONFIG

    try:
        raw = None
        if args.config is not None:
            raw = args.config.read_text()
        rc = validate_config(
            raw, mode=args.mode, preset=args.preset,
            out_dir=str(args.out) if args.out else None, seed=args.seed,
            overlap=args.overlap, binning=args.binning,
            efficiency=args.efficiency, threads=args.threads)
        summary = run(rc)
    except ConfigError as exc:
        for err in exc.errors:
            print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except ValueError as exc:
        print(f"domain error: {exc}", file=sys.stderr)
        return EXIT_DOMAIN
    except DisconnectedArrayError as exc:
        print(f"processing error: {exc}", file=sys.stderr)
        return EXIT_PROCESSING
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    except RuntimeError as exc:
        print(f"processing error: {exc}", file=sys.stderr)
        return EXIT_PROCESSING

    print(json.dumps(summary, sort_keys=True, default=str))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
