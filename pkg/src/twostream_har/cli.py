"""Command-line entry point: ``twostream-har <command> [options]``."""

from __future__ import annotations

import argparse
import logging
import sys
import traceback
from pathlib import Path

from . import pipeline as P
from .exceptions import (
    AlignmentError,
    ConfigError,
    ParseError,
    StateError,
    SynchronizationError,
    TrainingDivergedError,
    ValidationError,
)
from .preprocess import WINDOW_PROFILES
from .models import TRAIN_PROFILES

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_DIVERGED = 0, 2, 3, 4
COMMANDS = ("synth", "preprocess", "train", "evaluate", "fuse", "report", "pipeline")

logger = logging.getLogger("twostream_har")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="twostream-har", description=__doc__)
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", help="dataset manifest (or its directory) or synthetic config JSON")
    parser.add_argument("--synth", metavar="PRESET", help="generate a named synthetic dataset (e.g. 'default')")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--out", default="runs/default", help="run directory")
    parser.add_argument("--window-profile", choices=sorted(WINDOW_PROFILES))
    parser.add_argument("--train-profile", choices=sorted(TRAIN_PROFILES), default="default")
    parser.add_argument("--fusion", choices=("average", "max", "both"), default="both")
    parser.add_argument("--epochs", type=int, help="override the train profile's epoch budgets")
    parser.add_argument("--stream", choices=("vision", "inertial", "both"), default="both", help="train only one stream")
    parser.add_argument("-v", "--verbose", action="store_true")
    return parser


def _run(cfg: P.RunConfig, stream: str) -> str:
    run_dir = Path(cfg.out)
    if cfg.command == "pipeline":
        P.run_pipeline(cfg)
        return P.emit_reports(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    if cfg.command == "synth":
        path = P.write_synthetic(P.synthetic_config(cfg), run_dir / "data")
        return f"wrote {path}\n"
    if cfg.command == "preprocess":
        P.write_run_manifest(cfg, run_dir)
        manifest = P.resolve_manifest(cfg, run_dir)
        return f"wrote {P.preprocess_stage(manifest, run_dir, cfg.seed, cfg.window_profile)}\n"
    if cfg.command == "train":
        streams = P.STREAMS if stream == "both" else (stream,)
        P.train_stage(run_dir, cfg, streams)
        return f"checkpoints in {run_dir / 'checkpoints'}\n"
    if cfg.command == "evaluate":
        P.score_stage(run_dir)
        P.fuse_stage(run_dir, cfg.fusion)
        return P.emit_reports(run_dir)
    if cfg.command == "fuse":
        P.fuse_stage(run_dir, cfg.fusion)
        return P.emit_reports(run_dir)
    return P.emit_reports(run_dir)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    cfg = P.RunConfig(
        command=args.command,
        config=args.config,
        synth=args.synth,
        seed=args.seed,
        out=args.out,
        window_profile=args.window_profile,
        train_profile=args.train_profile,
        fusion=args.fusion,
        epochs=args.epochs,
    )
    try:
        sys.stdout.write(_run(cfg, args.stream))
        return EXIT_OK
    except TrainingDivergedError as exc:
        code = EXIT_DIVERGED
        err = exc
    except (ConfigError, StateError) as exc:
        code = EXIT_CONFIG
        err = exc
    except (ParseError, SynchronizationError, ValidationError, AlignmentError, FileNotFoundError) as exc:
        code = EXIT_DATA
        err = exc
    if args.verbose:
        traceback.print_exception(err)
    sys.stderr.write(f"error in stage '{cfg.command}': {err}\n")
    marker = Path(cfg.out)
    if marker.is_dir():
        (marker / "FAILED").write_text(f"stage: {cfg.command}\n{type(err).__name__}: {err}\n", encoding="utf-8")
    return code


if __name__ == "__main__":
    sys.exit(main())
