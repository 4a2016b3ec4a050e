"""Command-line entry point: ``rnlab <scenario> [--config PATH] [--seed N] [--out DIR] [--threads N]``.

Exit codes: 0 all checks passed, 1 a check failed, 2 configuration error,
3 numerical failure (crossing trajectories, non-finite state, mass drift).
"""
from __future__ import annotations

import argparse
import sys
from importlib import resources

from rnlab.errors import ConfigError, NumericalFailure
from rnlab.experiments.config import SCENARIOS, load_config, parse_config
from rnlab.experiments.report import emit_report, format_timings
from rnlab.experiments.scenarios import SCENARIO_RUNNERS

EXIT_PASS, EXIT_CHECK_FAILED, EXIT_CONFIG, EXIT_NUMERICAL = 0, 1, 2, 3


def default_config_text(scenario: str) -> str:
    return resources.files("rnlab.experiments").joinpath("configs", f"{scenario}.ini").read_text()


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="scenario config (default: the built-in one)")
    common.add_argument("--seed", type=int, metavar="N", help="override the master seed")
    common.add_argument("--out", metavar="DIR", help="output directory for report files")
    common.add_argument("--threads", type=int, metavar="N", help="worker threads (results do not depend on it)")

    parser = argparse.ArgumentParser(prog="rnlab", description="Numerical lab for transport by rough noisy drifts.",
                                     parents=[common])
    sub = parser.add_subparsers(dest="scenario", required=True, metavar="SCENARIO")
    for name in SCENARIOS:
        p = sub.add_parser(name, parents=[common], help=SCENARIO_RUNNERS[name].__doc__.splitlines()[0])
        p.add_argument("--print-config", action="store_true", help="print the effective config and exit")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.config:
            cfg = load_config(args.config, args.scenario)
        else:
            cfg = parse_config(default_config_text(args.scenario), args.scenario)
        cfg = cfg.with_overrides(seed=args.seed, out=args.out, threads=args.threads)
        if args.print_config:
            sys.stdout.write(cfg.to_ini())
            return EXIT_PASS
        report = SCENARIO_RUNNERS[args.scenario](cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalFailure as exc:
        print(f"numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL

    paths = emit_report(report, cfg.out)
    for c in report.checks:
        print(f"{'PASS' if c.passed else 'FAIL'} {c.name}: {c.detail}")
    print(f"wrote {len(paths)} files to {cfg.out}")
    print(format_timings(report), file=sys.stderr)
    return EXIT_PASS if report.passed else EXIT_CHECK_FAILED


if __name__ == "__main__":
    sys.exit(main())
