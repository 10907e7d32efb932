"""Training helpers and the strategy comparison used by the pipeline."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

from .agent import DEFAULT_INSTR_DIM, ActionContext, InstructionRecord, PolicyAgent, train
from .augment import Cofa, Original, Replace, Stochastic, Strategy, strategy_kinds
from .featurestore import KINDS, FeatureKind, FeatureStore
from .navgraph import NavGraph
from .rollout import MetricSummary, RandomWalkPolicy, RolloutConfig, evaluate_split
from .voting import Trajectory, VoteTable, build_vote_table, constant_kind, preference_pass, step_contexts


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 500
    lr: float = 20.0
    seed: int = 0
    instr_dim: int = DEFAULT_INSTR_DIM


def kind_dataset(trajs: Sequence[Trajectory], graph: NavGraph, store: FeatureStore,
                 kind: FeatureKind) -> list[tuple[ActionContext, InstructionRecord]]:
    return [(c, t.instruction) for t in trajs for c in step_contexts(t, graph, store, constant_kind(kind))]


def strategy_dataset(strategy: Strategy, trajs: Sequence[Trajectory], graph: NavGraph,
                     store: FeatureStore) -> list[tuple[ActionContext, InstructionRecord]]:
    return [
        (c, t.instruction)
        for t in trajs
        for c in step_contexts(t, graph, store, strategy_kinds(strategy, t.traj_id))
    ]


def train_kind_agents(trajs: Sequence[Trajectory], graph: NavGraph, store: FeatureStore,
                      cfg: TrainConfig = TrainConfig()) -> dict[FeatureKind, tuple[PolicyAgent, list[float]]]:
    """One agent per feature kind, each trained only on its own kind."""
    out = {}
    for kind in KINDS:
        agent = PolicyAgent.init(kind, store.dim, cfg.instr_dim, seed=cfg.seed)
        out[kind] = train(agent, kind_dataset(trajs, graph, store, kind), cfg.epochs, cfg.lr)
    return out


def train_strategy_policy(strategy: Strategy, trajs: Sequence[Trajectory], graph: NavGraph, store: FeatureStore,
                          cfg: TrainConfig = TrainConfig()) -> tuple[PolicyAgent, list[float]]:
    """Navigation policy trained on features chosen online by ``strategy``."""
    agent = PolicyAgent.init(FeatureKind.ORI, store.dim, cfg.instr_dim, seed=cfg.seed)
    agent, curve = train(agent, strategy_dataset(strategy, trajs, graph, store), cfg.epochs, cfg.lr)
    return PolicyAgent(agent.kind, agent.feature_dim, agent.instr_dim, agent.weights, agent.lr, agent.seed,
                       agent.epochs, {**agent.meta, "strategy": strategy.name}), curve


def default_strategies(votes: VoteTable, seed: int = 0) -> list[Strategy]:
    return [
        Original(),
        Replace(FeatureKind.FG),
        Replace(FeatureKind.BG),
        Stochastic(FeatureKind.FG, seed),
        Stochastic(FeatureKind.BG, seed),
        Cofa(votes),
    ]


@dataclass
class Comparison:
    votes: VoteTable
    summaries: dict[str, MetricSummary]
    agents: Mapping[FeatureKind, PolicyAgent]
    policies: Mapping[str, PolicyAgent]


def compare_strategies(
    train_trajs: Sequence[Trajectory],
    eval_trajs: Sequence[Trajectory],
    graph: NavGraph,
    store: FeatureStore,
    cfg: TrainConfig = TrainConfig(),
    rollout: RolloutConfig = RolloutConfig(),
    episode_seed: int = 0,
    jobs: int = 1,
) -> Comparison:
    """Train the voting agents, vote, then train and evaluate one policy per strategy."""
    trained = train_kind_agents(train_trajs, graph, store, cfg)
    agents = {k: a for k, (a, _) in trained.items()}
    votes = build_vote_table(preference_pass(agents, train_trajs, store, graph, jobs=jobs))
    summaries: dict[str, MetricSummary] = {}
    policies = {}
    for strat in default_strategies(votes, episode_seed):
        policy, _ = train_strategy_policy(strat, train_trajs, graph, store, cfg)
        policies[strat.name] = policy
        summaries[strat.name] = evaluate_split(policy, strat, eval_trajs, graph, store, rollout, jobs=jobs)
    summaries["random-walk"] = evaluate_split(RandomWalkPolicy(episode_seed), Original(), eval_trajs, graph,
                                              store, rollout, jobs=jobs)
    return Comparison(votes, summaries, agents, policies)
