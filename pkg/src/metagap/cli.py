"""Command-line front end: ``metagap <command> --config study.json``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .pipeline import STAGES, Pipeline, StageError, StudyConfig

logger = logging.getLogger("metagap")

STAGE_COMMANDS = {s: s for s in STAGES if s != "report"}


def _add_globals(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="study config JSON")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--out", type=Path, help="output directory (overrides config output_dir)")
    p.add_argument("--stages", help="comma-separated stages for `run` (default: all of " + ",".join(STAGES) + ")")
    p.add_argument("--jobs", type=int, default=1, help="worker count for extraction and LODO folds")
    p.add_argument("--verbose", "-v", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="metagap", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in STAGE_COMMANDS:
        _add_globals(sub.add_parser(name, help=f"run the {name} stage"))
    p = sub.add_parser("report", help="render report.md and plot data from existing artifacts")
    _add_globals(p)
    p = sub.add_parser("run", help="run several stages in pipeline order")
    _add_globals(p)
    p = sub.add_parser("synth", help="write the bundled synthetic demo study")
    _add_globals(p)
    p.add_argument("--n-datasets", type=int, default=30)
    p = sub.add_parser("sweep", help="planted-signal retention vs. number of datasets")
    _add_globals(p)
    p.add_argument("--n-datasets", default="25,51,100,200")
    p.add_argument("--betas", default="0.25,0.5,1.0")
    p.add_argument("--reps", type=int, default=10)
    p.add_argument("--n-null", type=int, default=200)
    p.add_argument("--noise-sd", type=float, default=1.0)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)

    if args.command == "synth":
        from .demo import write_demo_study
        if args.out is None:
            print("synth needs --out DIR", file=sys.stderr)
            return 2
        path = write_demo_study(args.out, seed=7 if args.seed is None else args.seed, n_datasets=args.n_datasets)
        print(path)
        return 0
    if args.command == "sweep":
        from .store import ArtifactStore
        from .synthetic import sweep
        if args.out is None or args.seed is None:
            print("sweep needs --out DIR and --seed N", file=sys.stderr)
            return 2
        table = sweep([int(x) for x in args.n_datasets.split(",")], [float(x) for x in args.betas.split(",")],
                      args.reps, args.n_null, args.noise_sd, args.seed)
        ArtifactStore(args.out).persist("sweep", table)
        print(table.to_string(index=False))
        return 0

    if args.config is None:
        print(f"{args.command} needs --config PATH", file=sys.stderr)
        return 2
    try:
        config = StudyConfig.load(args.config, seed=args.seed, out=args.out)
    except (ValueError, FileNotFoundError, KeyError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    pipeline = Pipeline(config, jobs=args.jobs, verbose=args.verbose)
    if args.command == "run":
        stages = [s.strip() for s in (args.stages or ",".join(STAGES)).split(",") if s.strip()]
    else:
        stages = [args.command]
    try:
        pipeline.run(stages)
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
