"""Command-line front end of the experiment harness.

    python -m transport_pinn all --config test1.json --out runs/t1
    python -m transport_pinn train --test test2 --epochs 0 --out runs/empty
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import harness

STAGES = {
    "reference": harness.run_reference,
    "train": harness.run_train,
    "compare": harness.run_compare,
    "all": harness.run_all,
}


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="python -m transport_pinn", description="PINN vs AP transport experiments")
    p.add_argument("command", choices=sorted(STAGES))
    p.add_argument("--config", type=Path, help="JSON experiment config")
    p.add_argument("--test", choices=("test1", "test2"), default="test1", help="preset used when --config is absent")
    p.add_argument("--seed", type=int, help="override network.seed")
    p.add_argument("--out", help="override output_dir")
    p.add_argument("--epochs", type=int, help="override training.epochs")
    p.add_argument("--epsilon", type=float, help="override problem.epsilon")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def _usage_error(parser, message) -> int:
    parser.print_usage(sys.stderr)
    print(f"error: {message}", file=sys.stderr)
    return 2


def build_config(args) -> harness.ExperimentConfig:
    config = harness.ExperimentConfig.load(args.config) if args.config else harness.preset(args.test)
    if args.seed is not None:
        config = replace(config, network=replace(config.network, seed=args.seed))
    if args.epochs is not None:
        config = replace(config, training=replace(config.training, epochs=args.epochs))
    if args.epsilon is not None:
        config = replace(config, problem=replace(config.problem, epsilon=args.epsilon))
    if args.out is not None:
        config = replace(config, output_dir=args.out)
    return config


def cli_main(argv=None) -> int:
    parser = _parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse already printed usage
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")

    if args.config is not None and not args.config.is_file():
        return _usage_error(parser, f"config file not found: {args.config}")
    try:
        config = build_config(args)
    except (ValueError, TypeError, json.JSONDecodeError) as exc:
        return _usage_error(parser, f"invalid config: {exc}")

    try:
        result = STAGES[args.command](config)
    except harness.HarnessError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    if isinstance(result, dict):
        for snap in result["snapshots"]:
            print(f"t={snap['t']:.6g} rel_err={snap['rel_err']:.4f} max_gap={snap['max_gap']:.4g}")
    else:
        print(result)
    return 0


if __name__ == "__main__":
    sys.exit(cli_main())
