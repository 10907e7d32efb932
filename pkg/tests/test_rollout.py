from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import small_scene_data
from cofa.agent import InstructionRecord, PolicyAgent
from cofa.augment import Cofa, Original, Replace, Stochastic
from cofa.featurestore import KINDS, FeatureKind, FeatureStore
from cofa.navgraph import graph_from_json, path_length
from cofa.rollout import (
    EpisodeResult,
    RandomWalkPolicy,
    RolloutConfig,
    compute_spl,
    distribution_csv,
    evaluate_split,
    format_table,
    preference_distribution,
    run_episode,
    summarize,
)
from cofa.voting import Trajectory, VoteTable

INSTR = InstructionRecord("go", np.zeros(2))


def line_world(values, objects=None, emb=None):
    """Unit-spaced path graph A-B-C-...; every kind's feature is ``values[vp]``."""
    names = list(values)
    data = {
        "scan_id": "line",
        "viewpoints": [{"id": n, "position": [float(i), 0, 0], "objects": (objects or {}).get(n, [])}
                       for i, n in enumerate(names)],
        "edges": [e for a, b in zip(names, names[1:]) for e in ([a, b], [b, a])],
    }
    if emb is not None:
        data["object_embeddings"] = emb
    graph = graph_from_json(data)
    store = FeatureStore(1, {(n, k): [v] for n, v in values.items() for k in KINDS})
    return graph, store


# Scores each candidate by its feature value; STOP carries the current feature.
CLIMBER = PolicyAgent("ori", 1, 2, np.array([0.0, 1.0, 0.0, 0.0]))


def traj(path, goal=None, target=None):
    path = tuple(path)
    return Trajectory("t", "line", path, INSTR, goal or path[-1], target)


def test_start_is_goal_stops_immediately():
    graph, store = line_world({"A": 0.0, "B": 1.0, "C": 0.0})
    r = run_episode(CLIMBER, Original(), traj(["B"]), graph, store)
    assert (r.tl, r.ne, r.success, r.spl, r.steps) == (0.0, 0.0, 1, 1.0, 0)
    assert not r.terminated_by_limit


def test_hand_walked_episode():
    graph, store = line_world({"A": 0.0, "B": 1.0, "C": 0.0})
    r = run_episode(CLIMBER, Original(), traj(["A", "B"]), graph, store)
    assert r.path == ["A", "B"]
    assert (r.tl, r.ne, r.success, r.spl) == (1.0, 0.0, 1, 1.0)
    # No object table: grounding is not applicable rather than zero.
    assert r.rgs is None and r.rgspl is None


def test_step_limit():
    graph, store = line_world({"A": 0.0, "B": 1.0, "C": 2.0, "D": 3.0})
    r = run_episode(CLIMBER, Original(), traj(["A", "B"]), graph, store, step_limit=2)
    assert r.steps == 2 and r.terminated_by_limit and r.path == ["A", "B", "C"]
    assert r.ne == 1.0 and r.success == 1  # scored where it ended, within the default radius
    r = run_episode(CLIMBER, Original(), traj(["A", "B"]), graph, store, step_limit=2, success_radius=0.5)
    assert r.success == 0 and r.spl == 0.0


def test_grounding_head():
    emb = {"cup": [1.0], "rug": [-1.0]}
    graph, store = line_world({"A": 0.0, "B": 1.0, "C": 0.0}, objects={"B": ["rug", "cup"]}, emb=emb)
    hit = run_episode(CLIMBER, Original(), traj(["A", "B"], target="cup"), graph, store)
    assert hit.grounded_object == "cup" and hit.rgs == 1 and hit.rgspl == 1.0
    miss = run_episode(CLIMBER, Original(), traj(["A", "B"], target="rug"), graph, store)
    assert miss.rgs == 0 and miss.rgspl == 0.0


def test_strategy_kind_reaches_the_policy():
    graph = line_world({"A": 0.0, "B": 0.0})[0]
    store = FeatureStore(1, {("A", "ori"): [1], ("B", "ori"): [0], ("A", "fg"): [0], ("B", "fg"): [1],
                             ("A", "bg"): [1], ("B", "bg"): [0]})
    assert run_episode(CLIMBER, Original(), traj(["A", "B"]), graph, store).stop_viewpoint == "A"
    assert run_episode(CLIMBER, Replace("fg"), traj(["A", "B"]), graph, store).stop_viewpoint == "B"
    cofa = Cofa(VoteTable.from_labels({"A": "fg"}))
    assert run_episode(CLIMBER, cofa, traj(["A", "B"]), graph, store).strategy == "cofa"


def test_compute_spl_examples():
    assert compute_spl(1, 10, 20) == 0.5
    assert compute_spl(0, 10, 20) == 0.0 and compute_spl(0, 0, 0) == 0.0
    assert compute_spl(1, 10, 10) == 1.0 and compute_spl(1, 0, 0) == 1.0
    with pytest.raises(ValueError):
        compute_spl(1, -1, 2)


def fake(traj_id, spl, success=1):
    return EpisodeResult(traj_id, ["a"], "a", None, 2.0, 0.0, success, spl, None, None, 1, False)


def test_summary_means():
    s = summarize([fake("b", 0.0, 0), fake("a", 1.0)])
    assert s.spl == 0.5 and s.sr == 0.5 and s.rgs is None
    assert [e.traj_id for e in s.episodes] == ["a", "b"]
    with pytest.raises(ValueError):
        summarize([])
    with pytest.raises(ValueError):
        RolloutConfig(step_limit=0)


def test_summary_equals_mean_of_records(small_scene):
    scene, store = small_scene
    s = evaluate_split(RandomWalkPolicy(3), Original(), scene.trajectories, scene.graph, store)
    assert s.n == len(scene.trajectories)
    assert s.tl == math.fsum(e.tl for e in s.episodes) / s.n
    assert s.spl == math.fsum(e.spl for e in s.episodes) / s.n
    assert s.rgs is not None


def test_preference_distribution_examples():
    ts = [Trajectory("t1", "s", ("v1", "v2"), INSTR, "v2", split="val"),
          Trajectory("t2", "s", ("v2", "v3"), INSTR, "v3", split="val")]
    dist = preference_distribution(VoteTable.from_labels({"v1": "fg", "v2": "fg", "v3": "bg"}), ts)
    pct = dist["val"]
    assert abs(pct[FeatureKind.FG] - 200 / 3) < 1e-9 and abs(pct[FeatureKind.BG] - 100 / 3) < 1e-9
    assert pct[FeatureKind.ORI] == 0.0
    assert preference_distribution(VoteTable(), ts)["val"][FeatureKind.ORI] == 100.0
    with pytest.raises(ValueError):
        preference_distribution(VoteTable(), [])
    csv = distribution_csv(dist)
    assert csv.splitlines()[0] == "split,kind,percent"
    assert csv.splitlines()[2] == "val,fg,66.666667"


@given(st.lists(st.tuples(st.sampled_from(["v0", "v1", "v2", "v3", "v4"]),
                          st.sampled_from(["ori", "fg", "bg"])), max_size=5),
       st.lists(st.lists(st.sampled_from(["v0", "v1", "v2", "v3", "v4", "v5"]), min_size=1, max_size=4),
                min_size=1, max_size=5),
       st.lists(st.sampled_from(["train", "val"]), min_size=5, max_size=5))
def test_percentages_sum_to_100(labels, paths, splits):
    ts = [Trajectory(f"t{i}", "s", tuple(p), INSTR, p[-1], split=splits[i]) for i, p in enumerate(paths)]
    for pct in preference_distribution(VoteTable.from_labels(dict(labels)), ts).values():
        assert abs(math.fsum(pct.values()) - 100.0) <= 1e-9


def test_table_layout():
    table = format_table({"cofa": summarize([fake("a", 0.25)])})
    header, rule, row = table.splitlines()
    assert header.split() == ["Strategy", "TL", "SR", "SPL", "RGS", "RGSPL", "NE"]
    assert row.split() == ["cofa", "2.00", "100.00", "25.00", "-", "-", "0.00"]
    assert set(rule) == {"-"}


# -- properties over random policies -----------------------------------------------------


@given(st.integers(0, 2**32 - 1), st.floats(0.1, 6.0), st.integers(1, 12))
def test_episode_metric_identities(seed, radius, limit):
    scene, store = small_scene_data()
    rng = np.random.default_rng(seed)
    t = scene.trajectories[int(rng.integers(len(scene.trajectories)))]
    policy = PolicyAgent("ori", store.dim, t.instruction.embedding.size,
                         rng.standard_normal(2 * store.dim + t.instruction.embedding.size))
    strategy = [Original(), Replace("fg"), Stochastic("bg", seed)][seed % 3]
    r = run_episode(policy, strategy, t, scene.graph, store, limit, radius)
    assert r.spl <= r.success and r.rgspl <= r.rgs
    if r.ne == 0:
        assert r.success == 1
    assert r.tl == path_length(scene.graph, r.path)
    assert r.tl == math.fsum(scene.graph.weight(a, b) for a, b in zip(r.path, r.path[1:]))
    assert r.steps == len(r.path) - 1 <= limit


def test_jobs_are_bit_reproducible(small_scene):
    scene, store = small_scene
    rng = np.random.default_rng(1)
    idim = scene.trajectories[0].instruction.embedding.size
    policy = PolicyAgent("ori", store.dim, idim, rng.standard_normal(2 * store.dim + idim))
    runs = [evaluate_split(policy, Stochastic("fg", 5), scene.trajectories, scene.graph, store, jobs=j)
            for j in (1, 1, 8)]
    recs = [[e.to_json() for e in r.episodes] for r in runs]
    assert recs[0] == recs[1] == recs[2]
    assert runs[0].to_json() == runs[2].to_json()


def test_directional_ordering_on_default_scene():
    from cofa.experiment import TrainConfig, compare_strategies
    from cofa.scene import extract_store, generate_scene

    scene = generate_scene(12, 40, 0.5, 8)
    store = extract_store(scene.panoramas, 8, scene.graph.scan_id)
    train = [t for t in scene.trajectories if t.split == "train"]
    val = [t for t in scene.trajectories if t.split != "train"]
    cmp = compare_strategies(train, val, scene.graph, store, TrainConfig())
    sr = {name: s.sr for name, s in cmp.summaries.items()}
    assert sr["cofa"] >= max(sr["replace-fg"], sr["replace-bg"])
    for name in ("cofa", "replace-fg", "replace-bg"):
        assert sr[name] > sr["random-walk"]
