"""Two-stage consensus voting over per-viewpoint feature preferences.

Stage one picks, for every trajectory step, the feature kind whose frozen
agent has the lowest cross-entropy on the ground-truth action. Stage two takes
a majority vote of those labels across every trajectory step at a viewpoint.
Both stages break ties by canonical kind order (ori, fg, bg).
"""

from __future__ import annotations

import json
import math
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

from .agent import STOP, ActionContext, InstructionRecord, PolicyAgent, build_context, preference_score
from .featurestore import KINDS, FeatureKind, FeatureStore
from .navgraph import NavGraph


class VotingError(ValueError):
    pass


@dataclass(frozen=True)
class Trajectory:
    traj_id: str
    scan_id: str
    path: tuple[str, ...]
    instruction: InstructionRecord
    goal_viewpoint: str
    target_object: str | None = None
    split: str = "train"

    def __post_init__(self) -> None:
        if not self.path:
            raise VotingError(f"trajectory {self.traj_id!r} has an empty path")
        if self.goal_viewpoint != self.path[-1]:
            raise VotingError(f"trajectory {self.traj_id!r}: goal {self.goal_viewpoint!r} is not the last path viewpoint")

    def check(self, graph: NavGraph) -> None:
        for a, b in zip(self.path, self.path[1:]):
            if b not in graph.neighbors(a):
                raise VotingError(f"trajectory {self.traj_id!r}: {a!r} -> {b!r} is not a graph edge")

    def to_json(self) -> dict:
        return {
            "traj_id": self.traj_id,
            "scan_id": self.scan_id,
            "path": list(self.path),
            "instruction": self.instruction.text,
            "goal_viewpoint": self.goal_viewpoint,
            "target_object": self.target_object,
            "split": self.split,
        }

    @classmethod
    def from_json(cls, rec: Mapping, instr_dim: int) -> "Trajectory":
        return cls(
            traj_id=str(rec["traj_id"]),
            scan_id=str(rec["scan_id"]),
            path=tuple(str(v) for v in rec["path"]),
            instruction=InstructionRecord.from_text(rec["instruction"], instr_dim),
            goal_viewpoint=str(rec["goal_viewpoint"]),
            target_object=rec.get("target_object"),
            split=rec.get("split", "train"),
        )


def load_trajectories(path: str | Path, instr_dim: int) -> list[Trajectory]:
    out = []
    with open(path) as fh:
        for line in fh:
            if line.strip():
                out.append(Trajectory.from_json(json.loads(line), instr_dim))
    return out


def save_trajectories(trajs: Iterable[Trajectory], path: str | Path) -> None:
    with open(path, "w") as fh:
        for t in trajs:
            fh.write(json.dumps(t.to_json(), sort_keys=True) + "\n")


KindFn = Callable[[str, int], FeatureKind]
"""Feature kind observed while standing at ``(viewpoint_id, step)``. The kind
applies to the whole observation at that step: the current viewpoint and every
candidate direction."""


def step_contexts(traj: Trajectory, graph: NavGraph, store: FeatureStore, kind_at: KindFn) -> list[ActionContext]:
    """One decision context per path step; the final step's ground truth is STOP."""
    traj.check(graph)
    ctxs = []
    for step, vp in enumerate(traj.path):
        kind = kind_at(vp, step)
        nbrs = graph.neighbors(vp)
        gt = traj.path[step + 1] if step + 1 < len(traj.path) else STOP
        ctxs.append(
            build_context(
                vp,
                store.get(vp, kind),
                nbrs,
                [store.get(n, kind) for n in nbrs],
                gt,
                sample_id=f"{traj.traj_id}:{step}",
            )
        )
    return ctxs


def constant_kind(kind: FeatureKind) -> KindFn:
    return lambda vp, step: kind


# -- preference pass ------------------------------------------------------------


@dataclass(frozen=True)
class PreferenceEntry:
    traj_id: str
    step: int
    viewpoint_id: str
    scores: Mapping[FeatureKind, float]

    def __post_init__(self) -> None:
        if set(self.scores) != set(KINDS):
            raise VotingError(f"entry ({self.traj_id!r}, step {self.step}) must score exactly ori, fg, bg")
        for k, s in self.scores.items():
            if not math.isfinite(s):
                raise VotingError(f"entry ({self.traj_id!r}, step {self.step}) has non-finite {k} score")


PreferenceTable = list[PreferenceEntry]


def preference_pass(
    agents: Mapping[FeatureKind, PolicyAgent],
    trajectories: Sequence[Trajectory],
    store: FeatureStore,
    graph: NavGraph,
    jobs: int = 1,
) -> PreferenceTable:
    """Score every trajectory step with each frozen agent on its own feature kind."""
    agents = {FeatureKind.parse(k): a for k, a in agents.items()}
    missing = [k.value for k in KINDS if k not in agents]
    if missing:
        raise VotingError(f"preference pass needs agents for all kinds; missing {missing}")
    for k, a in agents.items():
        if a.feature_dim != store.dim:
            raise VotingError(f"agent {k} expects dim {a.feature_dim}, store has {store.dim}")

    def one(traj: Trajectory) -> list[PreferenceEntry]:
        per_kind = {k: step_contexts(traj, graph, store, constant_kind(k)) for k in KINDS}
        return [
            PreferenceEntry(
                traj.traj_id,
                step,
                vp,
                {k: preference_score(agents[k], per_kind[k][step], traj.instruction) for k in KINDS},
            )
            for step, vp in enumerate(traj.path)
        ]

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            chunks = list(pool.map(one, trajectories))
    else:
        chunks = [one(t) for t in trajectories]
    return [e for chunk in chunks for e in chunk]


def save_preferences(table: PreferenceTable, path: str | Path) -> None:
    with open(path, "w") as fh:
        for e in table:
            rec = {"traj_id": e.traj_id, "step": e.step, "viewpoint": e.viewpoint_id,
                   "scores": {k.value: e.scores[k] for k in KINDS}}
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def load_preferences(path: str | Path) -> PreferenceTable:
    out = []
    with open(path) as fh:
        for line in fh:
            if line.strip():
                r = json.loads(line)
                out.append(PreferenceEntry(r["traj_id"], int(r["step"]), r["viewpoint"],
                                           {FeatureKind.parse(k): float(v) for k, v in r["scores"].items()}))
    return out


# -- voting -------------------------------------------------------------------------


def vote_trajectory(scores: Mapping[FeatureKind | str, float]) -> FeatureKind:
    """Kind with the lowest preference score; earliest canonical kind wins ties."""
    parsed = {FeatureKind.parse(k): float(v) for k, v in scores.items()}
    best = None
    for k in KINDS:
        if k not in parsed:
            continue
        s = parsed[k]
        if not math.isfinite(s):
            raise VotingError(f"non-finite {k} preference score {s}")
        if best is None or s < parsed[best]:
            best = k
    if best is None:
        raise VotingError("no scores to vote on")
    return best


def vote_majority(labels: Iterable[FeatureKind | str]) -> FeatureKind:
    counts = Counter(FeatureKind.parse(k) for k in labels)
    if not counts:
        raise VotingError("majority vote over an empty set of labels")
    top = max(counts.values())
    return next(k for k in KINDS if counts[k] == top)


@dataclass
class VoteRecord:
    counts: dict[FeatureKind, int]
    final: FeatureKind
    labels: list[tuple[str, int, FeatureKind]] = field(default_factory=list)


class VoteTable(dict):
    """viewpoint id -> VoteRecord."""

    def final(self, vp_id: str, default: FeatureKind = FeatureKind.ORI) -> FeatureKind:
        rec = self.get(vp_id)
        return default if rec is None else rec.final

    def labels(self) -> dict[str, FeatureKind]:
        return {vp: rec.final for vp, rec in self.items()}

    def to_json(self) -> dict:
        return {
            vp: {"final": rec.final.value, "counts": {k.value: rec.counts[k] for k in KINDS}}
            for vp, rec in sorted(self.items())
        }

    @classmethod
    def from_json(cls, data: Mapping) -> "VoteTable":
        table = cls()
        for vp, rec in data.items():
            counts = {k: int(rec.get("counts", {}).get(k.value, 0)) for k in KINDS}
            table[vp] = VoteRecord(counts, FeatureKind.parse(rec["final"]))
        return table

    @classmethod
    def from_labels(cls, labels: Mapping[str, FeatureKind | str]) -> "VoteTable":
        table = cls()
        for vp, k in labels.items():
            k = FeatureKind.parse(k)
            table[vp] = VoteRecord({kk: int(kk == k) for kk in KINDS}, k)
        return table


def build_vote_table(pref: PreferenceTable) -> VoteTable:
    per_vp: dict[str, list[tuple[str, int, FeatureKind]]] = {}
    for e in pref:
        per_vp.setdefault(e.viewpoint_id, []).append((e.traj_id, e.step, vote_trajectory(e.scores)))
    table = VoteTable()
    for vp in sorted(per_vp):
        labels = per_vp[vp]
        counts = Counter(k for _, _, k in labels)
        table[vp] = VoteRecord({k: counts[k] for k in KINDS}, vote_majority(k for _, _, k in labels), labels)
    return table


def save_vote_table(table: VoteTable, path: str | Path) -> None:
    Path(path).write_text(json.dumps(table.to_json(), indent=1, sort_keys=True) + "\n")


def load_vote_table(path: str | Path) -> VoteTable:
    return VoteTable.from_json(json.loads(Path(path).read_text()))
