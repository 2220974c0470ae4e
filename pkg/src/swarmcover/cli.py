"""``swarmcover simulate|train|evaluate|export``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from swarmcover import harness
from swarmcover.config import ConfigError, load_json
from swarmcover.trainer import TrainingDiverged


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="swarmcover", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "simulate": "run one episode and write trajectory, potential trace and SVG frames",
        "train": "behaviour-cloning pre-training followed by MAPPO",
        "evaluate": "success rate and convergence time over many seeds",
        "export": "merge potential traces of finished runs and re-render frames",
    }
    for name, text in helps.items():
        p = sub.add_parser(name, help=text)
        p.add_argument("--config", type=Path, help="JSON config file")
        p.add_argument("--seed", type=int, help="seed (start of the seed range for evaluate)")
        p.add_argument("--out", type=Path, required=True, help="output directory")
        p.add_argument("--controller", help="'classical', 'zero' or a policy checkpoint path")
        if name == "train":
            p.add_argument("--resume", type=Path, help="checkpoint to resume MAPPO from")
        if name == "export":
            p.add_argument("inputs", nargs="*", type=Path, help="run directories to merge")
    return parser


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        raw = load_json(args.config) if args.config else {}
        if not isinstance(raw, dict):
            raise ConfigError("config file must hold a JSON object")
        base_dir = args.config.parent if args.config else Path(".")
        common = dict(seed=args.seed, controller=args.controller, base_dir=base_dir)
        if args.command == "simulate":
            result = harness.cmd_simulate(raw, args.out, **common)
        elif args.command == "evaluate":
            rows = harness.cmd_evaluate(raw, args.out, **common)
            print(harness.format_table(rows), end="")
            return 0
        elif args.command == "train":
            resume = args.resume
            if resume is not None and not resume.exists():
                raise harness.HarnessError(f"checkpoint not found: {resume}")
            result = harness.cmd_train(raw, args.out, resume=resume, **common)
        else:
            if args.inputs:
                raw = {**raw, "inputs": [str(p.resolve()) for p in args.inputs]}
            result = harness.cmd_export(raw, args.out, **common)
    except (harness.HarnessError, ConfigError, TrainingDiverged, ValueError, OSError) as exc:
        print(f"swarmcover {args.command}: error: {exc}", file=sys.stderr)
        return 1
    print(json.dumps(result, sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
