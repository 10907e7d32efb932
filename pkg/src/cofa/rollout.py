"""Episode execution under an augmentation strategy and VLN metrics.

Metrics per episode: trajectory length (TL), navigation error (NE, geodesic
stop-to-goal), success (NE within ``success_radius``), SPL, and the grounding
pair RGS / RGSPL when the graph carries an object-embedding table.
"""

from __future__ import annotations

import csv
import io
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .agent import PolicyAgent, build_context, score_actions
from .augment import Strategy, episode_draw, strategy_kinds
from .featurestore import KINDS, FeatureKind, FeatureStore
from .navgraph import NavGraph, path_length
from .voting import Trajectory, VoteTable

DEFAULT_SUCCESS_RADIUS = 3.0
DEFAULT_STEP_LIMIT = 15


@dataclass(frozen=True)
class RandomWalkPolicy:
    """Uniform choice over neighbors and STOP at every step (a lower baseline)."""

    seed: int = 0


@dataclass(frozen=True)
class RolloutConfig:
    step_limit: int = DEFAULT_STEP_LIMIT
    success_radius: float = DEFAULT_SUCCESS_RADIUS

    def __post_init__(self) -> None:
        if self.step_limit < 1:
            raise ValueError("step_limit must be >= 1")
        if self.success_radius <= 0:
            raise ValueError("success_radius must be positive")


@dataclass
class EpisodeResult:
    traj_id: str
    path: list[str]
    stop_viewpoint: str
    grounded_object: str | None
    tl: float
    ne: float
    success: int
    spl: float
    rgs: int | None
    rgspl: float | None
    steps: int
    terminated_by_limit: bool
    strategy: str = ""

    def to_json(self) -> dict:
        return asdict(self)


def compute_spl(success: int | bool, shortest: float, tl: float) -> float:
    """Success weighted by ``shortest / max(shortest, tl)``; equals ``success`` when both lengths are 0."""
    if shortest < 0 or tl < 0:
        raise ValueError(f"path lengths must be non-negative, got shortest={shortest}, tl={tl}")
    if not success:
        return 0.0
    denom = max(shortest, tl)
    return 1.0 if denom == 0 else shortest / denom


def _ground(graph: NavGraph, vp: str, obs: np.ndarray) -> str | None:
    emb = graph.object_embeddings or {}
    best, best_score = None, -math.inf
    for obj in graph.viewpoints[vp].object_ids:
        e = emb.get(obj)
        if e is None or e.shape != obs.shape:
            continue
        s = float(e @ obs)
        if s > best_score:
            best, best_score = obj, s
    return best


def run_episode(
    policy: PolicyAgent | RandomWalkPolicy,
    strategy: Strategy,
    traj: Trajectory,
    graph: NavGraph,
    store: FeatureStore,
    step_limit: int = DEFAULT_STEP_LIMIT,
    success_radius: float = DEFAULT_SUCCESS_RADIUS,
) -> EpisodeResult:
    """Greedy rollout from the trajectory's first viewpoint.

    At every step ``strategy`` picks the feature kind for the whole
    observation (current viewpoint and candidate directions); the episode ends on STOP or after ``step_limit`` moves and is
    scored at the viewpoint where it ended.
    """
    start = traj.path[0]
    if start not in graph:
        raise KeyError(f"start viewpoint {start!r} of {traj.traj_id!r} is not in the graph")
    kind_at = strategy_kinds(strategy, traj.traj_id)
    cur, path, steps, by_limit = start, [start], 0, False
    while True:
        nbrs = graph.neighbors(cur)
        kind = kind_at(cur, steps)
        if steps >= step_limit:
            by_limit = True
            break
        if isinstance(policy, RandomWalkPolicy):
            u = episode_draw(policy.seed, traj.traj_id, steps, 0)
            choice = int(u * (len(nbrs) + 1))
        else:
            ctx = build_context(cur, store.get(cur, kind), nbrs, [store.get(n, kind) for n in nbrs])
            choice = int(np.argmax(score_actions(policy, ctx, traj.instruction)))
        if choice == len(nbrs):
            break
        cur = nbrs[choice]
        path.append(cur)
        steps += 1

    tl = path_length(graph, path)
    ne = graph.geodesic(cur, traj.goal_viewpoint)
    success = int(ne <= success_radius)
    shortest = graph.geodesic(start, traj.goal_viewpoint)
    grounded = rgs = rgspl = None
    if graph.object_embeddings is not None and traj.target_object is not None:
        if isinstance(policy, RandomWalkPolicy):
            objs = graph.viewpoints[cur].object_ids
            grounded = objs[int(episode_draw(policy.seed, traj.traj_id, steps, 1) * len(objs))] if objs else None
        else:
            grounded = _ground(graph, cur, store.get(cur, kind))
        rgs = int(grounded == traj.target_object)
        rgspl = compute_spl(rgs, shortest, tl)
    return EpisodeResult(
        traj_id=traj.traj_id,
        path=path,
        stop_viewpoint=cur,
        grounded_object=grounded,
        tl=tl,
        ne=ne,
        success=success,
        spl=compute_spl(success, shortest, tl),
        rgs=rgs,
        rgspl=rgspl,
        steps=steps,
        terminated_by_limit=by_limit,
        strategy=getattr(strategy, "name", ""),
    )


@dataclass
class MetricSummary:
    n: int
    tl: float
    ne: float
    sr: float
    spl: float
    rgs: float | None
    rgspl: float | None
    episodes: list[EpisodeResult] = field(default_factory=list, repr=False)

    def to_json(self) -> dict:
        return {k: getattr(self, k) for k in ("n", "tl", "ne", "sr", "spl", "rgs", "rgspl")}


def summarize(episodes: Iterable[EpisodeResult]) -> MetricSummary:
    eps = sorted(episodes, key=lambda e: e.traj_id)
    if not eps:
        raise ValueError("cannot summarise an empty set of episodes")
    n = len(eps)

    def mean(xs: list[float]) -> float:
        return math.fsum(xs) / len(xs)

    grounded = [e for e in eps if e.rgs is not None]
    return MetricSummary(
        n=n,
        tl=mean([e.tl for e in eps]),
        ne=mean([e.ne for e in eps]),
        sr=mean([e.success for e in eps]),
        spl=mean([e.spl for e in eps]),
        rgs=mean([e.rgs for e in grounded]) if grounded else None,
        rgspl=mean([e.rgspl for e in grounded]) if grounded else None,
        episodes=eps,
    )


def evaluate_split(
    policy: PolicyAgent | RandomWalkPolicy,
    strategy: Strategy,
    trajectories: Sequence[Trajectory],
    graph: NavGraph,
    store: FeatureStore,
    config: RolloutConfig = RolloutConfig(),
    jobs: int = 1,
) -> MetricSummary:
    if not trajectories:
        raise ValueError("evaluate_split needs at least one trajectory")

    def one(t: Trajectory) -> EpisodeResult:
        return run_episode(policy, strategy, t, graph, store, config.step_limit, config.success_radius)

    if jobs > 1:
        graph.warm_cache({t.goal_viewpoint for t in trajectories} | {t.path[0] for t in trajectories})
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            episodes = list(pool.map(one, trajectories))
    else:
        episodes = [one(t) for t in trajectories]
    return summarize(episodes)


# -- reporting ----------------------------------------------------------------------

_COLUMNS = ("TL", "SR", "SPL", "RGS", "RGSPL", "NE")


def format_table(rows: Mapping[str, MetricSummary]) -> str:
    """Aligned text table; rates are reported x100."""

    def cell(v: float | None, scale: float) -> str:
        return "-" if v is None else f"{v * scale:.2f}"

    body = [["Strategy", *_COLUMNS]]
    for name, s in rows.items():
        body.append([name, cell(s.tl, 1), cell(s.sr, 100), cell(s.spl, 100), cell(s.rgs, 100),
                     cell(s.rgspl, 100), cell(s.ne, 1)])
    widths = [max(len(r[i]) for r in body) for i in range(len(body[0]))]
    lines = []
    for j, r in enumerate(body):
        lines.append("  ".join(c.ljust(widths[0]) if i == 0 else c.rjust(widths[i]) for i, c in enumerate(r)))
        if j == 0:
            lines.append("-" * len(lines[0]))
    return "\n".join(lines) + "\n"


def write_episodes(episodes: Iterable[EpisodeResult], path: str | Path) -> None:
    with open(path, "w") as fh:
        for e in episodes:
            fh.write(json.dumps(e.to_json(), sort_keys=True) + "\n")


def preference_distribution(
    votes: VoteTable,
    trajectories: Sequence[Trajectory],
    key: Callable[[Trajectory, str], str] | None = None,
) -> dict[str, dict[FeatureKind, float]]:
    """Percent of distinct visited viewpoints assigned each final kind, per group.

    Groups default to the trajectory split. Unvoted viewpoints count as ori.
    """
    if not trajectories:
        raise ValueError("preference distribution over an empty split")
    key = key or (lambda t, vp: t.split)
    members: dict[str, set[str]] = {}
    for t in trajectories:
        for vp in t.path:
            members.setdefault(key(t, vp), set()).add(vp)
    out = {}
    for group in sorted(members):
        vps = members[group]
        counts = {k: 0 for k in KINDS}
        for vp in vps:
            counts[votes.final(vp)] += 1
        out[group] = {k: 100.0 * c / len(vps) for k, c in counts.items()}
    return out


def distribution_csv(dist: Mapping[str, Mapping[FeatureKind, float]], group_label: str = "split") -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([group_label, "kind", "percent"])
    for group, pct in dist.items():
        for k in KINDS:
            w.writerow([group, k.value, f"{pct[k]:.6f}"])
    return buf.getvalue()
