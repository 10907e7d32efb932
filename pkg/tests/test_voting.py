from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import graph_of
from oracles import brute_vote_table, random_vote_instance
from cofa.agent import InstructionRecord, PolicyAgent
from cofa.featurestore import KINDS, FeatureKind, FeatureStore
from cofa.voting import (
    PreferenceEntry,
    Trajectory,
    VoteTable,
    VotingError,
    build_vote_table,
    load_preferences,
    load_vote_table,
    preference_pass,
    save_preferences,
    save_vote_table,
    vote_majority,
    vote_trajectory,
)

FG, BG, ORI = FeatureKind.FG, FeatureKind.BG, FeatureKind.ORI


def entries_of(raw):
    return [PreferenceEntry(t, s, vp, {FeatureKind(k): v for k, v in sc.items()}) for t, s, vp, sc in raw]


def two_node_setup(fg_weight=50.0):
    graph = graph_of([("A", "B", 1.0)])
    store = FeatureStore(1, {
        ("A", ORI): [0.3], ("B", ORI): [0.3],
        ("A", FG): [0.0], ("B", FG): [1.0],
        ("A", BG): [0.7], ("B", BG): [0.7],
    })
    traj = Trajectory("t0", "s", ("A", "B"), InstructionRecord("go", np.zeros(2)), "B")
    # Candidate-feature weight only: moving A->B and stopping at B both favour fg = 1.
    agents = {k: PolicyAgent(k, 1, 2, np.zeros(4)) for k in KINDS}
    agents[FG] = PolicyAgent(FG, 1, 2, np.array([0, fg_weight, 0, 0]))
    return graph, store, traj, agents


# -- examples --------------------------------------------------------------------------


def test_vote_trajectory_examples():
    assert vote_trajectory({"ori": 0.5, "fg": 0.2, "bg": 0.9}) is FG
    assert vote_trajectory({"ori": 0.3, "fg": 0.3, "bg": 0.9}) is ORI
    assert vote_trajectory({"ori": 1.0, "fg": 1.0, "bg": 1.0}) is ORI
    assert vote_trajectory({"ori": 0.3, "fg": 0.1, "bg": 0.1}) is FG
    with pytest.raises(VotingError):
        vote_trajectory({"ori": float("nan"), "fg": 0, "bg": 0})


def test_vote_majority_examples():
    assert vote_majority(["fg", "fg", "bg"]) is FG
    assert vote_majority(["bg", "fg"]) is FG
    assert vote_majority(["ori"]) is ORI
    with pytest.raises(VotingError):
        vote_majority([])


def test_table_counts_example():
    raw = [(f"t{i}", 0, "v", {"ori": 1, "fg": 0 if lab == "fg" else 2, "bg": 0 if lab == "bg" else 2})
           for i, lab in enumerate(["fg", "fg", "bg"])]
    table = build_vote_table(entries_of(raw))
    assert table["v"].final is FG
    assert table["v"].counts == {ORI: 0, FG: 2, BG: 1}
    assert "other" not in table and table.final("other") is ORI


def test_preference_pass_shape_and_rigged_fg():
    graph, store, traj, agents = two_node_setup()
    table = preference_pass(agents, [traj], store, graph)
    assert [(e.step, e.viewpoint_id) for e in table] == [(0, "A"), (1, "B")]
    for e in table:
        assert set(e.scores) == set(KINDS)
        assert e.scores[FG] < e.scores[ORI] and e.scores[FG] < e.scores[BG]
        assert e.scores[FG] < 1e-12 and abs(e.scores[ORI] - np.log(2)) < 1e-12
    assert build_vote_table(table).labels() == {"A": FG, "B": FG}


def test_repeated_viewpoint_gets_one_entry_per_step():
    graph, store, _, agents = two_node_setup()
    traj = Trajectory("t1", "s", ("A", "B", "A", "B"), InstructionRecord("go", np.zeros(2)), "B")
    table = preference_pass(agents, [traj], store, graph)
    assert [e.step for e in table] == [0, 1, 2, 3]
    assert sum(build_vote_table(table)["A"].counts.values()) == 2


def test_preference_pass_needs_all_agents():
    graph, store, traj, agents = two_node_setup()
    del agents[BG]
    with pytest.raises(VotingError, match="bg"):
        preference_pass(agents, [traj], store, graph)


def test_trajectory_must_follow_edges():
    graph, store, _, agents = two_node_setup()
    g3 = graph_of([("A", "B", 1.0), ("B", "C", 1.0)])
    bad = Trajectory("t", "s", ("A", "C"), InstructionRecord("go", np.zeros(2)), "C")
    with pytest.raises(VotingError, match="not a graph edge"):
        preference_pass(agents, [bad], store, g3)


def test_jobs_do_not_change_the_table(small_scene):
    from cofa.experiment import TrainConfig, train_kind_agents

    scene, store = small_scene
    trajs = scene.trajectories
    trained = train_kind_agents([t for t in trajs if t.split == "train"], scene.graph, store,
                                TrainConfig(epochs=30, instr_dim=trajs[0].instruction.embedding.size))
    agents = {k: a for k, (a, _) in trained.items()}
    one = preference_pass(agents, trajs, store, scene.graph, jobs=1)
    many = preference_pass(agents, trajs, store, scene.graph, jobs=6)
    assert one == many


def test_serialisation_round_trip(tmp_path):
    table = entries_of(random_vote_instance(np.random.default_rng(5)))
    save_preferences(table, tmp_path / "p.jsonl")
    assert load_preferences(tmp_path / "p.jsonl") == table
    votes = build_vote_table(table)
    save_vote_table(votes, tmp_path / "v.json")
    back = load_vote_table(tmp_path / "v.json")
    assert back.labels() == votes.labels()
    assert {vp: r.counts for vp, r in back.items()} == {vp: r.counts for vp, r in votes.items()}
    assert VoteTable.from_labels({"x": "bg"}).final("x") is BG


# -- properties --------------------------------------------------------------------------

seeds = st.integers(0, 2**32 - 1)


def as_plain(table):
    return {vp: (r.final.value, {k.value: c for k, c in r.counts.items()}) for vp, r in table.items()}


def test_random_instance_matches_oracle():
    rng = np.random.default_rng(11)
    for _ in range(50):
        raw = random_vote_instance(rng)
        assert as_plain(build_vote_table(entries_of(raw))) == brute_vote_table(raw)


@given(seeds)
def test_oracle_equivalence(seed):
    raw = random_vote_instance(np.random.default_rng(seed))
    assert as_plain(build_vote_table(entries_of(raw))) == brute_vote_table(raw)


@given(st.fixed_dictionaries({k: st.integers(-800, 800).map(lambda x: x / 8) for k in ("ori", "fg", "bg")}),
       st.sampled_from([-4.0, -0.5, 0.0, 0.25, 8.0]))
def test_argmin_shift_invariance(scores, c):
    # Eighths plus dyadic shifts are exact in binary floating point, so ties stay ties.
    assert vote_trajectory(scores) is vote_trajectory({k: v + c for k, v in scores.items()})


@given(seeds, st.sampled_from(KINDS))
def test_monotone_dominance(seed, winner):
    rng = np.random.default_rng(seed)
    raw = []
    for t, step, vp, scores in random_vote_instance(rng):
        if vp == "v0":
            scores = dict(scores, **{winner.value: min(scores.values()) - 0.1})
        raw.append((t, step, vp, scores))
    table = build_vote_table(entries_of(raw))
    if "v0" in table:
        assert table["v0"].final is winner


@given(seeds)
def test_trajectory_order_invariance(seed):
    rng = np.random.default_rng(seed)
    raw = random_vote_instance(rng)
    order = list(rng.permutation(len(raw)))
    shuffled = [raw[i] for i in order]
    assert as_plain(build_vote_table(entries_of(raw))) == as_plain(build_vote_table(entries_of(shuffled)))


@given(seeds)
def test_count_conservation(seed):
    raw = random_vote_instance(np.random.default_rng(seed))
    table = build_vote_table(entries_of(raw))
    for vp, rec in table.items():
        assert sum(rec.counts.values()) == sum(1 for e in raw if e[2] == vp)
