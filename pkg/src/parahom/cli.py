"""Command-line entry point: ``parahom run | validate | list-experiments``."""

from __future__ import annotations

import argparse
import sys

from .errors import ConfigError
from .experiments import (DESCRIPTIONS, EXIT_CONFIG, EXIT_RUNTIME, EXPERIMENTS, ExperimentConfig, StageError,
                          run, validate, worker_env)


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="parahom", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run an experiment and write CSVs plus manifest.json")
    r.add_argument("--config", required=True)
    r.add_argument("--seed", type=int, default=None)
    r.add_argument("--out", default=None)
    v = sub.add_parser("validate", help="check a config without running it")
    v.add_argument("--config", required=True)
    sub.add_parser("list-experiments", help="print the available experiment names")
    return p


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    if args.command == "list-experiments":
        for name in EXPERIMENTS:
            print(f"{name:15s} {DESCRIPTIONS[name]}")
        return 0
    try:
        cfg = ExperimentConfig.from_file(args.config)
    except ConfigError as exc:
        for d in exc.diagnostics:
            print(f"config error: {d}", file=sys.stderr)
        return EXIT_CONFIG
    if args.command == "validate":
        diags = validate(cfg)
        for d in diags:
            print(f"config error: {d}", file=sys.stderr)
        if not diags:
            print("config ok")
        return EXIT_CONFIG if diags else 0
    try:
        manifest = run(cfg, out=args.out, seed=args.seed, workers=worker_env())
    except ConfigError as exc:
        for d in exc.diagnostics:
            print(f"config error: {d}", file=sys.stderr)
        return EXIT_CONFIG
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    print(f"{cfg.experiment}: {manifest.verdict}")
    for name, digest in manifest.files.items():
        print(f"  {name}  sha256={digest[:16]}")
    return manifest.exit_code


if __name__ == "__main__":
    sys.exit(main())
