"""Viewpoint-level feature augmentation strategies.

The chosen kind applies to the whole observation at a step: the current
viewpoint's feature and every candidate direction's feature.

Randomness enters only through an explicit ``draw`` in [0, 1); episodes get
their draws from :func:`episode_draw`, a counter-style stream keyed by
``(seed, episode id, step)`` so that results do not depend on the order in
which episodes are run.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Mapping, Union

import numpy as np

from .featurestore import FeatureKind, FeatureStore
from .voting import VoteTable, load_vote_table

AUGMENTED_KINDS = (FeatureKind.FG, FeatureKind.BG)


def _aug_kind(kind: FeatureKind | str) -> FeatureKind:
    k = FeatureKind.parse(kind)
    if k not in AUGMENTED_KINDS:
        raise ValueError(f"augmentation kind must be fg or bg, got {k}")
    return k


@dataclass(frozen=True)
class Original:
    @property
    def name(self) -> str:
        return "original"


@dataclass(frozen=True)
class Replace:
    kind: FeatureKind

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", _aug_kind(self.kind))

    @property
    def name(self) -> str:
        return f"replace-{self.kind.value}"


@dataclass(frozen=True)
class Stochastic:
    kind: FeatureKind
    seed: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", _aug_kind(self.kind))

    @property
    def name(self) -> str:
        return f"stochastic-{self.kind.value}"


@dataclass(frozen=True, eq=False)
class Cofa:
    votes: VoteTable = field(default_factory=VoteTable)

    @property
    def name(self) -> str:
        return "cofa"


Strategy = Union[Original, Replace, Stochastic, Cofa]


def episode_draw(seed: int, episode_id: str, step: int, slot: int = 0) -> float:
    """Uniform draw in [0, 1) for one (episode, step, slot) cell of a seeded stream."""
    ss = np.random.SeedSequence(entropy=seed, spawn_key=(zlib.crc32(episode_id.encode()), step, slot))
    return float(np.random.default_rng(ss).random())


def choose_kind(strategy: Strategy, vp_id: str, draw: float | None = None) -> FeatureKind:
    if isinstance(strategy, Original):
        return FeatureKind.ORI
    if isinstance(strategy, Replace):
        return strategy.kind
    if isinstance(strategy, Stochastic):
        if draw is None:
            raise ValueError("stochastic strategy needs a draw")
        if not 0.0 <= draw < 1.0:
            raise ValueError(f"draw must lie in [0, 1), got {draw}")
        return strategy.kind if draw > 0.5 else FeatureKind.ORI
    if isinstance(strategy, Cofa):
        return strategy.votes.final(vp_id)
    raise TypeError(f"unknown strategy {strategy!r}")


def select_feature(
    strategy: Strategy, vp_id: str, store: FeatureStore, draw: float | None = None
) -> tuple[FeatureKind, np.ndarray]:
    kind = choose_kind(strategy, vp_id, draw)
    return kind, store.get(vp_id, kind)


def strategy_kinds(strategy: Strategy, episode_id: str) -> Callable[[str, int], FeatureKind]:
    """Kind observed at ``(viewpoint, step)`` of one episode under ``strategy``."""
    if isinstance(strategy, Stochastic):
        return lambda vp, step: choose_kind(strategy, vp, episode_draw(strategy.seed, episode_id, step))
    return lambda vp, step: choose_kind(strategy, vp)


def parse_strategy(spec: str | Mapping[str, Any], base_dir: str | Path | None = None,
                   default_seed: int = 0) -> Strategy:
    """Build a strategy from ``"replace:fg"``-style strings or config dicts.

    Dict form: ``{"strategy": "cofa", "vote_table": path}``,
    ``{"strategy": "replace", "kind": "fg"}``, ``{"strategy": "stochastic", "kind": "bg", "seed": 3}``.
    """
    if isinstance(spec, str):
        name, _, kind = spec.partition(":")
        spec = {"strategy": name, **({"kind": kind} if kind else {})}
    name = str(spec.get("strategy", "")).lower()
    if name == "original":
        return Original()
    if name == "replace":
        return Replace(FeatureKind.parse(spec["kind"]))
    if name == "stochastic":
        return Stochastic(FeatureKind.parse(spec["kind"]), int(spec.get("seed", default_seed)))
    if name == "cofa":
        path = spec.get("vote_table")
        if path is None:
            return Cofa()
        path = Path(path)
        if base_dir is not None and not path.is_absolute():
            path = Path(base_dir) / path
        return Cofa(load_vote_table(path))
    raise ValueError(f"unknown augmentation strategy {spec!r}")
