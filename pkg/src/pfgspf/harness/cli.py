"""Command line interface: ``pfgspf {run,table,geff,validate}``."""

import argparse
from dataclasses import replace
import logging
import sys

from ..errors import ConfigError, FilterError
from .config import load_config
from .report import geff, table
from .runner import run_campaign


def _parser():
    p = argparse.ArgumentParser(prog="pfgspf", description="Particle flow Gaussian sum filter campaigns")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress and warnings")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a campaign and write result files")
    run.add_argument("config")
    run.add_argument("--seed", type=int, help="override campaign.seed")
    run.add_argument("--threads", type=int, help="worker threads (default: $PFGSPF_THREADS or 1)")
    run.add_argument("--out", help="override campaign.output")

    tab = sub.add_parser("table", help="recompute the summary table from a results directory")
    tab.add_argument("results")
    tab.add_argument("--format", choices=("text", "csv", "json"), default="text")

    ge = sub.add_parser("geff", help="per-step average G_eff series from a results directory")
    ge.add_argument("results")
    ge.add_argument("--format", choices=("csv", "json"), default="csv")

    val = sub.add_parser("validate", help="check a campaign file without running it")
    val.add_argument("config")
    return p


def main(argv=None):
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "validate":
            c = load_config(args.config)
            print(f"ok: {c.scenario_kind} scenario, {len(c.cells)} cell(s), "
                  f"{c.trajectories} trajectories x {c.runs} runs, fingerprint {c.fingerprint()}")
        elif args.command == "run":
            c = load_config(args.config)
            if args.seed is not None:
                if args.seed < 0:
                    raise ConfigError("seed must be non-negative", field="--seed")
                c = replace(c, seed=args.seed)
            if args.threads is not None and args.threads < 1:
                raise ConfigError("threads must be positive", field="--threads")
            out = run_campaign(c, output=args.out, threads=args.threads)
            print(f"results written to {out}")
        elif args.command == "table":
            sys.stdout.write(table(args.results, args.format))
        elif args.command == "geff":
            sys.stdout.write(geff(args.results, args.format))
    except (FilterError, OSError) as exc:
        print(f"pfgspf: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
