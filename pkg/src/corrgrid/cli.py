"""Command-line entry point: ``corrgrid <stage> [options]`` or ``corrgrid run --stages ...``.

Exit codes: 0 success, 2 configuration error, 3 missing prerequisite,
4 data validation failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

from .annotations import AnnotationError
from .ciss import CissError
from .detection import DetectionError
from .ensemble import EnsembleError
from .geometry import GeometryError
from .metrics import MetricError
from .pipeline import STAGES, ConfigError, PrerequisiteError, load_config, run_pipeline
from .scoring import ScoringError
from .synth import SynthError
from ._nn import TrainingDivergedError

EXIT_OK, EXIT_CONFIG, EXIT_PREREQ, EXIT_DATA = 0, 2, 3, 4
DATA_ERRORS = (AnnotationError, CissError, DetectionError, EnsembleError, GeometryError,
               MetricError, ScoringError, SynthError, TrainingDivergedError)


def _value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON configuration file")
    common.add_argument("--seed", type=int)
    common.add_argument("--n", type=int, help="segments per image side")
    common.add_argument("--tau-s", type=float, dest="tau_s")
    common.add_argument("--tau-i", type=float, dest="tau_i")
    common.add_argument("--tau-o", type=float, dest="tau_o")
    common.add_argument("--out", help="run directory")
    common.add_argument("--dataset", help="dataset directory (images/, grid/, objects/)")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override any config value by dotted name, e.g. ensemble.kind=svm")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="corrgrid", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", parents=[common], help="run several stages in dependency order")
    run.add_argument("--stages", help="comma-separated stage list (default: full pipeline)")
    for stage in STAGES:
        sub.add_parser(stage, parents=[common], help=f"run the {stage} stage")
    return parser


def overrides_from_args(args) -> dict:
    out = {}
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        key, text = item.split("=", 1)
        out[key.strip()] = _value(text)
    named = {"seed": args.seed, "grid.n": args.n, "decision.tau_s": args.tau_s,
             "decision.tau_I": args.tau_i, "decision.tau_o": args.tau_o, "out": args.out,
             "dataset.root": args.dataset}
    out.update({k: v for k, v in named.items() if v is not None})
    return out


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, overrides_from_args(args))
        if args.command == "run":
            stages = [s.strip() for s in args.stages.split(",")] if args.stages else None
        else:
            stages = [args.command]
        summaries = run_pipeline(cfg, stages)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except PrerequisiteError as exc:
        print(f"missing prerequisite: {exc}", file=sys.stderr)
        return EXIT_PREREQ
    except DATA_ERRORS as exc:
        print(f"data validation failure: {exc}", file=sys.stderr)
        return EXIT_DATA
    print(json.dumps(summaries, indent=1, sort_keys=True, default=str))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
