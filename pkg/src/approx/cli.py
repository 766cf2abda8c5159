"""``approx`` command line: run experiments and verify their manifests.

Exit codes: 0 all checks passed, 2 a check (or hash verification) failed,
3 configuration or usage error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from .experiments import EXPERIMENTS, ConfigError, ExperimentConfig, run_experiment, verify_manifest

EXIT_OK, EXIT_FAIL, EXIT_CONFIG = 0, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _jobs_default():
    raw = os.environ.get("APPROX_JOBS")
    if not raw:
        return 1
    try:
        return max(1, int(raw))
    except ValueError:
        return None


def build_parser():
    p = _Parser(prog="approx", description="Flow-approximation experiments.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    r = sub.add_parser("run", help="run an experiment")
    r.add_argument("experiment", choices=EXPERIMENTS)
    r.add_argument("--config", help="TOML or JSON config file")
    r.add_argument("--seed", type=int)
    r.add_argument("--out", help="output directory")
    r.add_argument("--jobs", type=int, default=None,
                   help="worker threads (default: $APPROX_JOBS or 1)")
    v = sub.add_parser("verify", help="re-check output hashes of a run manifest")
    v.add_argument("manifest")
    return p


def _run(args):
    jobs = args.jobs if args.jobs is not None else _jobs_default()
    if jobs is None or jobs < 1:
        raise ConfigError("jobs must be a positive integer")
    if args.config:
        cfg = ExperimentConfig.load(args.config, args.experiment)
    else:
        cfg = ExperimentConfig.defaults(args.experiment)
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.out is not None:
        overrides["out"] = args.out
    if overrides:
        cfg = ExperimentConfig.from_dict({**cfg.to_dict(), **overrides})
    man, outcome = run_experiment(cfg, cfg.out, jobs)
    for name, ok in outcome.checks.items():
        print(f"{'PASS' if ok else 'FAIL'}  {name}")
    print(f"outputs written to {cfg.out}")
    return EXIT_OK if outcome.passed else EXIT_FAIL


def _verify(args):
    try:
        bad = verify_manifest(args.manifest)
    except (OSError, ValueError, TypeError, KeyError) as exc:
        raise ConfigError(f"unreadable manifest: {exc}") from exc
    if bad:
        print(json.dumps(dict(mismatched=bad)))
        return EXIT_FAIL
    print("all output hashes match")
    return EXIT_OK


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return _run(args) if args.command == "run" else _verify(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
