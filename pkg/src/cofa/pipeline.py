"""End-to-end experiment stages with idempotent, digest-based skipping.

Stages run in order: generate, mask, ingest, train, vote, rollout, eval,
analyze. Each stage records a digest of its inputs (relevant config plus input
file bytes) in ``<output>/pipeline_state.json``; a stage is skipped when its
outputs exist and the recorded digest still matches. ``ingest`` is a
validation stage and always runs.
"""

from __future__ import annotations

import datetime as _dt
import hashlib
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Iterable

from .agent import load_agent, save_agent
from .augment import Cofa, Original, Strategy, parse_strategy
from .config import RANDOM_WALK, ExperimentConfig, strategy_name
from .disentangle import iter_panoramas
from .experiment import TrainConfig, train_kind_agents, train_strategy_policy
from .featurestore import KINDS, FeatureKind, FeatureStore, coverage_report, ingest, write_store
from .navgraph import NavGraph, load_graph
from .rollout import (
    EpisodeResult,
    MetricSummary,
    RandomWalkPolicy,
    RolloutConfig,
    distribution_csv,
    evaluate_split,
    format_table,
    preference_distribution,
    summarize,
    write_episodes,
)
from .scene import extract_store, generate_scene, write_scene
from .voting import (
    Trajectory,
    build_vote_table,
    load_trajectories,
    load_vote_table,
    preference_pass,
    save_preferences,
    save_vote_table,
)

log = logging.getLogger(__name__)

STAGES = ("generate", "mask", "ingest", "train", "vote", "rollout", "eval", "analyze")
TIMESTAMP_KEY = "generated_at"


class StageError(RuntimeError):
    """A stage failed; ``stage`` names it and the message carries the cause."""

    def __init__(self, stage: str, cause: str):
        super().__init__(f"[{stage}] {cause}")
        self.stage = stage
        self.cause = cause


@dataclass
class StageResult:
    stage: str
    status: str  # "ran" or "skipped"
    outputs: list[Path]


# -- helpers ------------------------------------------------------------------------


def _digest(parts: Iterable[Any], files: Iterable[Path] = ()) -> str:
    h = hashlib.sha256()
    for p in parts:
        h.update(json.dumps(p, sort_keys=True, default=str).encode())
        h.update(b"\0")
    for f in files:
        targets = sorted(x for x in f.rglob("*") if x.is_file()) if f.is_dir() else [f]
        for t in targets:
            h.update(t.name.encode())
            h.update(t.read_bytes() if t.exists() else b"<missing>")
    return h.hexdigest()


def _dump_json(obj: Any, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n")


def _out(cfg: ExperimentConfig, *parts: str) -> Path:
    return cfg.path("output").joinpath(*parts)


def _state_path(cfg: ExperimentConfig) -> Path:
    return _out(cfg, "pipeline_state.json")


def _load_state(cfg: ExperimentConfig) -> dict:
    p = _state_path(cfg)
    if p.exists():
        try:
            return json.loads(p.read_text())
        except json.JSONDecodeError:
            return {}
    return {}


def _graph(cfg: ExperimentConfig) -> NavGraph:
    return load_graph(cfg.path("graph"))


def _trajs(cfg: ExperimentConfig) -> list[Trajectory]:
    return load_trajectories(cfg.path("trajectories"), cfg.instr_dim)


def _splits(trajs: list[Trajectory]) -> tuple[list[Trajectory], list[Trajectory]]:
    train = [t for t in trajs if t.split == "train"]
    evals = [t for t in trajs if t.split != "train"] or train
    if not train:
        raise ValueError("no trajectories in the train split")
    return train, evals


def _store(cfg: ExperimentConfig) -> FeatureStore:
    store = ingest(cfg.path("features"))
    if store.dim != cfg.feature_dim:
        raise ValueError(f"feature store dim {store.dim} does not match config feature_dim {cfg.feature_dim}")
    return store


def _agent_path(cfg: ExperimentConfig, kind: FeatureKind) -> Path:
    return cfg.path("agents") / f"{kind.value}.json"


def _policy_path(cfg: ExperimentConfig, name: str) -> Path:
    return cfg.path("agents") / "policies" / f"{name}.json"


def _features_files(cfg: ExperimentConfig) -> list[Path]:
    manifest = cfg.path("features")
    return [manifest, manifest.with_suffix(".bin")]


def _train_cfg(cfg: ExperimentConfig) -> TrainConfig:
    return TrainConfig(epochs=cfg.epochs, lr=cfg.lr, seed=cfg.seeds.train, instr_dim=cfg.instr_dim)


def _strategy(cfg: ExperimentConfig, spec: Any) -> Strategy:
    if spec == RANDOM_WALK:
        return Original()
    strat = parse_strategy(spec, base_dir=cfg.root, default_seed=cfg.seeds.episode)
    if isinstance(strat, Cofa) and not (isinstance(spec, dict) and spec.get("vote_table")):
        strat = Cofa(load_vote_table(cfg.path("vote_table")))
    return strat


# -- stages -------------------------------------------------------------------------


def _generate(cfg: ExperimentConfig, jobs: int) -> list[Path]:
    sc = cfg.scene
    scene = generate_scene(
        cfg.seeds.scene, sc.node_count, sc.corridor_fraction, cfg.feature_dim,
        image_size=sc.image_size, off_noise=sc.off_noise, fg_area=sc.fg_area,
        min_goal_distance=sc.min_goal_distance, instr_dim=cfg.instr_dim,
    )
    pdir = cfg.path("panoramas")
    if pdir.is_dir():
        # Drop panoramas of a previously generated scene so mask sees only this one.
        for f in pdir.iterdir():
            if f.suffix in (".json", ".f32", ".u8"):
                f.unlink()
    paths = write_scene(scene, cfg.root, graph=cfg.path("graph"), trajectories=cfg.path("trajectories"),
                        panoramas=pdir)
    return list(paths.values())


def _mask(cfg: ExperimentConfig, jobs: int) -> list[Path]:
    pdir = cfg.path("panoramas")
    if not pdir.is_dir():
        raise FileNotFoundError(f"panorama directory {pdir} does not exist")
    panos = list(iter_panoramas(pdir))
    if not panos:
        raise ValueError(f"no panoramas found in {pdir}")
    scan_id = _graph(cfg).scan_id if cfg.path("graph").exists() else None
    manifest = write_store(extract_store(panos, cfg.feature_dim, scan_id), cfg.path("features"))
    return [manifest, manifest.with_suffix(".bin")]


def _ingest(cfg: ExperimentConfig, jobs: int) -> list[Path]:
    store = _store(cfg)
    graph = _graph(cfg)
    report = coverage_report(store, graph.ids())
    if report["missing"]:
        raise ValueError(f"{len(report['missing'])} graph viewpoints lack features, e.g. {report['missing'][0]!r}")
    out = _out(cfg, "coverage.json")
    _dump_json(report, out)
    return [out]


def _train(cfg: ExperimentConfig, jobs: int) -> list[Path]:
    graph, store = _graph(cfg), _store(cfg)
    train, _ = _splits(_trajs(cfg))
    trained = train_kind_agents(train, graph, store, _train_cfg(cfg))
    outs, curves = [], {}
    for kind, (agent, curve) in trained.items():
        outs.append(save_agent(agent, _agent_path(cfg, kind)))
        curves[kind.value] = curve
    curve_path = cfg.path("agents") / "loss_curves.json"
    _dump_json(curves, curve_path)
    return outs + [curve_path]


def _vote(cfg: ExperimentConfig, jobs: int) -> list[Path]:
    graph, store = _graph(cfg), _store(cfg)
    train, _ = _splits(_trajs(cfg))
    agents = {k: load_agent(_agent_path(cfg, k)) for k in KINDS}
    pref = preference_pass(agents, train, store, graph, jobs=jobs)
    pref_path = _out(cfg, "preferences.jsonl")
    pref_path.parent.mkdir(parents=True, exist_ok=True)
    save_preferences(pref, pref_path)
    table_path = cfg.path("vote_table")
    table_path.parent.mkdir(parents=True, exist_ok=True)
    save_vote_table(build_vote_table(pref), table_path)
    return [pref_path, table_path]


def _rollout(cfg: ExperimentConfig, jobs: int) -> list[Path]:
    graph, store = _graph(cfg), _store(cfg)
    train, evals = _splits(_trajs(cfg))
    rcfg = RolloutConfig(cfg.step_limit, cfg.success_radius)
    outs = []
    for spec in cfg.strategies:
        name = strategy_name(spec)
        strat = _strategy(cfg, spec)
        if spec == RANDOM_WALK:
            policy = RandomWalkPolicy(cfg.seeds.episode)
        else:
            agent, _ = train_strategy_policy(strat, train, graph, store, _train_cfg(cfg))
            # Roll out the checkpoint as stored so reruns from disk behave identically.
            policy = load_agent(save_agent(agent, _policy_path(cfg, name)))
            outs.append(_policy_path(cfg, name))
        summary = evaluate_split(policy, strat, evals, graph, store, rcfg, jobs=jobs)
        for e in summary.episodes:
            e.strategy = name
        ep_path = _out(cfg, "episodes", f"{name}.jsonl")
        ep_path.parent.mkdir(parents=True, exist_ok=True)
        write_episodes(summary.episodes, ep_path)
        outs.append(ep_path)
    return outs


def _load_episodes(path: Path) -> list[EpisodeResult]:
    out = []
    with open(path) as fh:
        for line in fh:
            if line.strip():
                out.append(EpisodeResult(**json.loads(line)))
    return out


def _eval(cfg: ExperimentConfig, jobs: int) -> list[Path]:
    rows: dict[str, MetricSummary] = {}
    for spec in cfg.strategies:
        name = strategy_name(spec)
        path = _out(cfg, "episodes", f"{name}.jsonl")
        if not path.exists():
            raise FileNotFoundError(f"no episodes for strategy {name!r} at {path}; run the rollout stage")
        rows[name] = summarize(_load_episodes(path))
    summary = {
        TIMESTAMP_KEY: _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
        "strategies": {name: s.to_json() for name, s in rows.items()},
        "seeds": {"scene": cfg.seeds.scene, "train": cfg.seeds.train, "episode": cfg.seeds.episode},
    }
    json_path, txt_path = _out(cfg, "summary.json"), _out(cfg, "summary.txt")
    _dump_json(summary, json_path)
    txt_path.write_text(format_table(rows))
    return [json_path, txt_path]


def _analyze(cfg: ExperimentConfig, jobs: int) -> list[Path]:
    votes = load_vote_table(cfg.path("vote_table"))
    trajs = _trajs(cfg)
    out = _out(cfg, "preference.csv")
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(distribution_csv(preference_distribution(votes, trajs)))
    outs = [out]
    graph = _graph(cfg)
    if all("region" in vp.attrs for vp in graph.viewpoints.values()):
        train, _ = _splits(trajs)
        by_region = preference_distribution(votes, train, key=lambda t, vp: graph.viewpoints[vp].attrs["region"])
        rpath = _out(cfg, "preference_region.csv")
        rpath.write_text(distribution_csv(by_region, group_label="region"))
        outs.append(rpath)
    return outs


_RUNNERS: dict[str, Callable[[ExperimentConfig, int], list[Path]]] = {
    "generate": _generate,
    "mask": _mask,
    "ingest": _ingest,
    "train": _train,
    "vote": _vote,
    "rollout": _rollout,
    "eval": _eval,
    "analyze": _analyze,
}


def _expected_outputs(cfg: ExperimentConfig, stage: str) -> list[Path]:
    if stage == "generate":
        return [cfg.path("graph"), cfg.path("trajectories"), cfg.path("panoramas")]
    if stage == "mask":
        return _features_files(cfg)
    if stage == "ingest":
        return [_out(cfg, "coverage.json")]
    if stage == "train":
        return [_agent_path(cfg, k) for k in KINDS] + [cfg.path("agents") / "loss_curves.json"]
    if stage == "vote":
        return [_out(cfg, "preferences.jsonl"), cfg.path("vote_table")]
    if stage == "rollout":
        return [_out(cfg, "episodes", f"{strategy_name(s)}.jsonl") for s in cfg.strategies]
    if stage == "eval":
        return [_out(cfg, "summary.json"), _out(cfg, "summary.txt")]
    if stage == "analyze":
        return [_out(cfg, "preference.csv")]
    raise KeyError(stage)


def _inputs_digest(cfg: ExperimentConfig, stage: str) -> str:
    c = cfg.to_json()
    files: list[Path]
    if stage == "generate":
        parts = [c["scene"], cfg.seeds.scene, cfg.feature_dim, cfg.instr_dim]
        files = []
    elif stage == "mask":
        parts, files = [cfg.feature_dim], [cfg.path("panoramas"), cfg.path("graph")]
    elif stage == "ingest":
        parts, files = [cfg.feature_dim], _features_files(cfg) + [cfg.path("graph")]
    elif stage == "train":
        parts = [cfg.epochs, cfg.lr, cfg.seeds.train, cfg.instr_dim, cfg.feature_dim]
        files = _features_files(cfg) + [cfg.path("graph"), cfg.path("trajectories")]
    elif stage == "vote":
        parts = [cfg.instr_dim]
        files = _features_files(cfg) + [cfg.path("graph"), cfg.path("trajectories")]
        files += [_agent_path(cfg, k) for k in KINDS] + [_agent_path(cfg, k).with_suffix(".bin") for k in KINDS]
    elif stage == "rollout":
        parts = [c["strategies"], cfg.epochs, cfg.lr, cfg.seeds.train, cfg.seeds.episode, cfg.step_limit,
                 cfg.success_radius, cfg.instr_dim]
        files = _features_files(cfg) + [cfg.path("graph"), cfg.path("trajectories"), cfg.path("vote_table")]
    elif stage == "eval":
        parts = [c["strategies"], c["seeds"]]
        files = _expected_outputs(cfg, "rollout")
    elif stage == "analyze":
        parts, files = [cfg.instr_dim], [cfg.path("vote_table"), cfg.path("trajectories"), cfg.path("graph")]
    else:
        raise KeyError(stage)
    return _digest([stage, *parts], files)


def run_stage(cfg: ExperimentConfig, stage: str, force: bool = False, jobs: int = 1) -> StageResult:
    """Run one stage unless its outputs are current.

    Raises:
        StageError: Wrapping any failure, tagged with the stage name.
    """
    if stage not in _RUNNERS:
        raise StageError(stage, f"unknown stage; expected one of {', '.join(STAGES)}")
    if jobs < 1:
        raise StageError(stage, f"jobs must be >= 1, got {jobs}")
    if stage == "generate" and cfg.scene is None:
        return StageResult(stage, "skipped", [])
    try:
        digest = _inputs_digest(cfg, stage)
        state = _load_state(cfg)
        current = state.get(stage) == digest and all(p.exists() for p in _expected_outputs(cfg, stage))
        if current and not force and stage != "ingest":
            log.info("%s: up to date, skipping", stage)
            return StageResult(stage, "skipped", _expected_outputs(cfg, stage))
        log.info("%s: running", stage)
        outputs = _RUNNERS[stage](cfg, jobs)
    except StageError:
        raise
    except Exception as exc:  # noqa: BLE001 - every failure is reported with its stage
        raise StageError(stage, f"{type(exc).__name__}: {exc}") from exc
    state = _load_state(cfg)
    state[stage] = digest
    _dump_json({k: state[k] for k in STAGES if k in state}, _state_path(cfg))
    return StageResult(stage, "ran", outputs)


def run_pipeline(cfg: ExperimentConfig, force: bool = False, jobs: int = 1) -> list[StageResult]:
    """Run every stage in order; the first failure aborts with a :class:`StageError`."""
    return [run_stage(cfg, stage, force=force, jobs=jobs) for stage in STAGES]


def artifact_files(cfg: ExperimentConfig) -> list[Path]:
    """Every file the pipeline writes, for determinism checks."""
    roots = [cfg.path(n) for n in ("graph", "trajectories", "panoramas", "features", "agents", "vote_table", "output")]
    roots.append(cfg.path("features").with_suffix(".bin"))
    files: set[Path] = set()
    for r in roots:
        if r.is_dir():
            files.update(p for p in r.rglob("*") if p.is_file())
        elif r.exists():
            files.add(r)
    return sorted(files)
