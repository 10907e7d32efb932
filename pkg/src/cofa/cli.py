"""Command-line entry point: ``cofa <stage> --config run.json``.

Each stage subcommand runs that stage of the pipeline; ``pipeline`` runs all of
them in order. Failures print ``error [stage]: cause`` and exit non-zero.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path
from typing import Sequence

from .config import ConfigError, ExperimentConfig, SceneConfig, load_config, save_config
from .pipeline import StageError, run_pipeline, run_stage

EXIT_STAGE = 1
EXIT_CONFIG = 2


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="experiment config (JSON); defaults are used when omitted")
    common.add_argument("--workdir", type=Path, help="directory for artifacts when no --config is given")
    common.add_argument("--seed-scene", type=int, help="override the scene seed")
    common.add_argument("--seed-train", type=int, help="override the training seed")
    common.add_argument("--seed-episode", type=int, help="override the episode seed")
    common.add_argument("--force", action="store_true", help="rerun stages even when outputs are current")
    common.add_argument("--jobs", type=int, default=1, help="worker threads for voting and rollouts")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="cofa", description="Consensus-driven feature augmentation experiments.")
    sub = p.add_subparsers(dest="command", required=True)
    helps = {
        "generate": "write a synthetic scan: graph, trajectories, panoramas and features",
        "mask": "extract ori/fg/bg features from the panoramas",
        "ingest": "validate the feature store and report coverage",
        "train": "train one agent per feature kind",
        "vote": "score trajectory steps and build the viewpoint vote table",
        "rollout": "train and roll out a navigation policy per strategy",
        "eval": "summarise episodes into metric tables",
        "analyze": "emit the viewpoint feature-preference distribution",
        "pipeline": "run every stage in order",
    }
    for name, text in helps.items():
        sp = sub.add_parser(name, parents=[common], help=text, description=text)
        if name == "generate":
            sp.add_argument("--nodes", type=int, help="viewpoint count")
            sp.add_argument("--corridor-fraction", type=float, help="share of corridor viewpoints")
            sp.add_argument("--dim", type=int, help="feature dimension")
            sp.add_argument("--save-config", type=Path, help="also write the effective config here")
    return p


def _config(args: argparse.Namespace) -> ExperimentConfig:
    if args.config is not None:
        cfg = load_config(args.config)
    else:
        cfg = ExperimentConfig(base_dir=str((args.workdir or Path(".")).resolve()))
    cfg = cfg.with_seeds(args.seed_scene, args.seed_train, args.seed_episode)
    if args.command == "generate":
        scene = cfg.scene or SceneConfig()
        if args.nodes is not None:
            scene = dataclasses.replace(scene, node_count=args.nodes)
        if args.corridor_fraction is not None:
            scene = dataclasses.replace(scene, corridor_fraction=args.corridor_fraction)
        cfg = dataclasses.replace(cfg, scene=scene)
        if args.dim is not None:
            cfg = dataclasses.replace(cfg, feature_dim=args.dim)
    return cfg


def main(argv: Sequence[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = _config(args)
    except (ConfigError, ValueError) as exc:
        print(f"error [config]: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if args.jobs < 1:
        print("error [config]: --jobs must be >= 1", file=sys.stderr)
        return EXIT_CONFIG

    try:
        if args.command == "pipeline":
            results = run_pipeline(cfg, force=args.force, jobs=args.jobs)
        elif args.command == "generate":
            results = [run_stage(cfg, s, force=args.force, jobs=args.jobs) for s in ("generate", "mask")]
            if args.save_config:
                save_config(cfg, args.save_config)
        else:
            results = [run_stage(cfg, args.command, force=args.force, jobs=args.jobs)]
    except StageError as exc:
        print(f"error [{exc.stage}]: {exc.cause}", file=sys.stderr)
        return EXIT_STAGE

    for r in results:
        print(f"{r.stage}: {r.status}", file=sys.stderr)
    out = cfg.path("output")
    if args.command == "ingest":
        print(json.dumps(json.loads((out / "coverage.json").read_text()), indent=1, sort_keys=True))
    if args.command in ("eval", "pipeline"):
        print((out / "summary.txt").read_text(), end="")
    if args.command in ("analyze", "pipeline"):
        print((out / "preference.csv").read_text(), end="")
    return 0


if __name__ == "__main__":
    sys.exit(main())
