"""Command line entry point.

``kinetic-flow run <config>`` executes one experiment config;
``kinetic-flow acceptance <suite>`` runs the verification battery.
Exit codes: 0 success, 2 validation problem (bad config, bad key, bad
value), 3 numeric failure (divergence, accuracy loss, degenerate
estimates).  Acceptance criterion failures are results, not errors, and
exit 0.
"""

import argparse
import sys

from .acceptance import SUITES, run_acceptance
from .config import parse_config
from .errors import KineticFlowError, ValidationError
from .runner import run_experiment

__all__ = ["main"]

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_NUMERIC = 3


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="kinetic-flow",
        description="Kinetic SDE simulation and verification toolkit.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="execute one experiment config")
    run_p.add_argument("config", help="path to a key = value config file")

    acc_p = sub.add_parser("acceptance", help="run the verification battery")
    acc_p.add_argument("suite", choices=sorted(SUITES),
                       help="battery size")
    acc_p.add_argument("--output", default="acceptance-out",
                       help="directory for the summary CSV")
    return parser


def main(argv=None):
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "run":
            cfg = parse_config(args.config)
            outputs = run_experiment(cfg)
            for name in outputs:
                print(f"wrote {cfg.output}/{name}")
            return EXIT_OK
        results = run_acceptance(args.suite, args.output)
        failed = [r for r in results if not r.passed]
        for r in results:
            status = "pass" if r.passed else "FAIL"
            print(f"[{status}] {r.index:2d} {r.name}: measured {r.measured:.6g} "
                  f"vs {r.threshold} ({r.seconds:.1f} s)")
        print(f"{len(results) - len(failed)}/{len(results)} criteria passed; "
              f"summary in {args.output}/acceptance.csv")
        return EXIT_OK
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except KineticFlowError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
