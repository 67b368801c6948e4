"""Command line entry point.

    stiffsense synth|estimate|correlate|classify|report --config cfg.json [--out DIR] [--seed N] [--jobs N]

Exit status: 0 success, 1 usage/config error, 2 data or numerical failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace

from .exceptions import ConfigError, StiffsenseError
from .pipeline import (
    PipelineConfig,
    run_classify,
    run_correlate,
    run_estimate,
    run_report,
    run_synth,
)

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser():
    parser = _Parser(prog="stiffsense", description="LPC and mass-spring-damper damping analysis")
    parser.add_argument("command", choices=("synth", "estimate", "correlate", "classify", "report"))
    parser.add_argument("--config", help="pipeline configuration (JSON)")
    parser.add_argument("--out", help="output directory (overrides config out_dir)")
    parser.add_argument("--seed", type=int, help="master seed (overrides config)")
    parser.add_argument("--jobs", type=int, help="parallel workers (overrides config)")
    parser.add_argument("--force", action="store_true", help="estimate: ignore the cached store")
    parser.add_argument("-v", "--verbose", action="store_true")
    return parser


def _config(args) -> PipelineConfig:
    config = PipelineConfig.load(args.config) if args.config else PipelineConfig()
    overrides = {}
    if args.out:
        overrides["out_dir"] = args.out
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.jobs is not None:
        overrides["jobs"] = args.jobs
    return replace(config, **overrides) if overrides else config


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        config = _config(args)
    except ConfigError as exc:
        print(f"stiffsense: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        if args.command == "synth":
            n = run_synth(config)
            print(f"{n} trials written to {config.trials_path}")
        elif args.command == "estimate":
            store = run_estimate(config, force=args.force)
            c = store.counts()
            print(f"{c['trials']} trials: LPC failures {c['lpc_failures']}, MSD failures {c['msd_failures']}")
        elif args.command == "correlate":
            curve, _ = run_correlate(config)
            print(f"correlation curve over {len(curve.thresholds)} thresholds, {curve.total_rows} paired rows")
        elif args.command == "classify":
            report = run_classify(config)
            print(f"{sum(c['available'] for c in report.cells)} of {len(report.cells)} cells classified")
        else:
            run_report(config)
            print(f"report written to {config.out / 'report.json'}")
    except ConfigError as exc:
        print(f"stiffsense: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (StiffsenseError, ArithmeticError, ValueError, OSError) as exc:
        print(f"stiffsense: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
