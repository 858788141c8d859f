"""Command line entry point: ``pointfoot-lab <command> ...``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .config import ConfigError, RunConfig, load_config
from .nn import CheckpointError

EXIT_OK, EXIT_ERROR, EXIT_CONFIG, EXIT_NUMERICAL = 0, 1, 2, 3
COMMANDS = ("train-teacher", "train-student", "eval", "render-depth", "plot")

log = logging.getLogger("pointfoot_lab")


def _positive(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pointfoot-lab", description="Point-foot biped locomotion: teacher PPO, student distillation, evaluation.")
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", type=Path, help="JSON run config; omitted keys take their defaults")
    parser.add_argument("--seed", type=int, help="overrides the config seed (0 <= seed < 2**64)")
    parser.add_argument("--out", type=Path, help="run / output directory")
    parser.add_argument("--checkpoint", "--teacher", dest="checkpoint", type=Path, help="policy checkpoint (teacher for train-student)")
    parser.add_argument("--envs", type=_positive, help="number of parallel environments")
    parser.add_argument("--iters", type=_positive, help="training iterations")
    parser.add_argument("--trace", action="store_true", help="write a per-step CSV trace of environment 0")
    parser.add_argument("--barlow-mode", choices=("standard", "literal"))
    parser.add_argument("--metrics", type=Path, action="append", default=[], help="plot: metrics CSV (repeatable)")
    parser.add_argument("--names", nargs="+", help="plot: legend names, one per --metrics")
    parser.add_argument("-v", "--verbose", action="store_true")
    return parser


def resolve_config(args) -> RunConfig:
    cfg = load_config(args.config)
    if args.seed is not None:
        if not 0 <= args.seed < 2**64:
            raise ConfigError("seed", f"must lie in [0, 2**64), got {args.seed}")
        cfg = replace(cfg, seed=args.seed)
    if args.barlow_mode is not None:
        cfg = replace(cfg, distill=replace(cfg.distill, barlow_mode=args.barlow_mode))
    return cfg


def _require(args, *names: str) -> None:
    missing = [f"--{n}" for n in names if getattr(args, n) in (None, [])]
    if missing:
        raise ConfigError("", f"{args.command} needs {', '.join(missing)}")


def _render_depth(cfg: RunConfig, out: Path) -> dict:
    from .depthcam import render_depth, write_pgm
    from .terrain import TerrainParameterError, generate_terrain, write_heightfield_csv

    r = cfg.render
    try:
        hf = generate_terrain(r.terrain_type, r.difficulty, cfg.env.terrain_extent, cfg.env.cell_size, cfg.env.terrain_seed)
        img = render_depth(hf, r.base_pose, cfg.env.camera)
    except (TerrainParameterError, ValueError) as exc:
        raise ConfigError("render", str(exc)) from None
    out.mkdir(parents=True, exist_ok=True)
    write_pgm(img.pixels, out / "depth.pgm")
    write_heightfield_csv(hf, out / "terrain.csv")
    return {"depth": str(out / "depth.pgm"), "terrain": str(out / "terrain.csv")}


def run(args) -> dict:
    from . import training
    from .plotting import plot_metrics

    cfg = resolve_config(args)
    if args.command == "plot":
        _require(args, "metrics", "out")
        written = plot_metrics(args.metrics, args.out, args.names)
        return {"plots": [str(p) for p in written]}
    _require(args, "out")
    if args.command == "render-depth":
        return _render_depth(cfg, args.out)
    if args.command == "train-teacher":
        res = training.train_teacher(cfg, args.out, args.iters, args.envs, args.trace)
        return {"checkpoint": str(res.checkpoint), "metrics": str(res.metrics), "iterations": res.iterations}
    if args.command == "train-student":
        _require(args, "checkpoint")
        res = training.train_student(cfg, args.checkpoint, args.out, args.iters, args.envs, args.trace)
        return {"checkpoint": str(res.checkpoint), "metrics": str(res.metrics), "iterations": res.iterations}
    _require(args, "checkpoint")
    return training.evaluate(args.checkpoint, cfg, args.out, args.envs).to_dict()


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    from .training import NumericalFault

    try:
        result = run(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalFault as exc:
        print(f"numerical fault: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (CheckpointError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    print(json.dumps(result, indent=2, sort_keys=True))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
