"""Command line entry point: ``secure-hfl {run,grid,compare}``."""
from __future__ import annotations

import argparse
import json
import logging
import sys

from . import kernels
from .config import ARMS, ExperimentConfig, load_config
from .errors import ConfigurationError
from .harness import compare_arms, format_report, read_summary, run_experiment, run_grid

logger = logging.getLogger("secure_hfl")


def _load(args):
    config = load_config(args.config) if args.config else ExperimentConfig()
    if args.seed is not None:
        config.run.seed = args.seed
    if getattr(args, "rounds", None) is not None:
        config.run.max_rounds = args.rounds
    if args.verbose > 1:
        config.run.verbose = True
    return config.validate()


def cmd_run(args):
    config = _load(args)
    if args.arm:
        config = config.with_arm(args.arm)
    result = run_experiment(config, args.out)
    for c in result.convergence:
        print(f"{result.arm} eps={c.epsilon:g} converged_round={c.render()}")
    print(f"final accuracy {result.accuracy_series()[-1]:.4f}")
    return 0


def cmd_grid(args):
    config = _load(args)

    def progress(arm, mean, var, res):
        logger.info("%s mean=%g var=%g -> %s", arm, mean, var, " ".join(c.render() for c in res.convergence))

    results = run_grid(config, args.out, progress)
    report = compare_arms(r for res in results for r in res.summary_rows())
    sys.stdout.write(format_report(report))
    return 0


def cmd_compare(args):
    rows = [row for path in args.summary for row in read_summary(path)]
    report = compare_arms(rows)
    if args.json:
        json.dump(report, sys.stdout, indent=2, default=str)
        sys.stdout.write("\n")
    else:
        sys.stdout.write(format_report(report))
    return 1 if args.strict and report["violations"] else 0


def build_parser():
    parser = argparse.ArgumentParser(prog="secure-hfl", description=__doc__)
    parser.add_argument("-v", "--verbose", action="count", default=0,
                        help="-v logs progress, -vv also writes trace/cluster/event CSVs")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="TOML config file (defaults apply when omitted)")
        p.add_argument("--out", help="output directory for rounds.csv, summary.csv, manifest.json")
        p.add_argument("--seed", type=int, help="override run.seed")
        p.add_argument("--rounds", type=int, help="override run.max_rounds")

    p = sub.add_parser("run", help="run a single experiment")
    common(p)
    p.add_argument("--arm", choices=sorted(ARMS), help="named comparison arm")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("grid", help="sweep the attack grid over all arms")
    common(p)
    p.set_defaults(func=cmd_grid)

    p = sub.add_parser("compare", help="trend report from summary.csv files")
    p.add_argument("summary", nargs="+")
    p.add_argument("--json", action="store_true")
    p.add_argument("--strict", action="store_true", help="exit 1 when any ordering is violated")
    p.set_defaults(func=cmd_compare)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.DEBUG if args.verbose > 1 else logging.INFO if args.verbose else logging.WARNING
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    logger.debug("kernel backend: %s", kernels.BACKEND)
    try:
        return args.func(args)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
