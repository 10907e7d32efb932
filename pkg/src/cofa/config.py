"""Experiment configuration: one self-describing JSON file plus CLI overrides.

Relative paths are resolved against ``workdir``, which is itself resolved
against the directory holding the config file.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Mapping

from .agent import DEFAULT_INSTR_DIM
from .augment import parse_strategy
from .rollout import DEFAULT_STEP_LIMIT, DEFAULT_SUCCESS_RADIUS

RANDOM_WALK = "random-walk"
DEFAULT_STRATEGIES = ("original", "replace:fg", "replace:bg", "stochastic:fg", "stochastic:bg", "cofa", RANDOM_WALK)


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class Seeds:
    scene: int = 12
    train: int = 0
    episode: int = 0


@dataclass(frozen=True)
class SceneConfig:
    """Parameters of the synthetic scan. A config without a scene uses existing files."""

    node_count: int = 40
    corridor_fraction: float = 0.5
    image_size: int = 6
    off_noise: float = 0.05
    fg_area: tuple[float, float] = (0.05, 0.9)
    min_goal_distance: float = 3.0


@dataclass(frozen=True)
class Paths:
    workdir: str = "."
    graph: str = "graph.json"
    trajectories: str = "trajectories.jsonl"
    panoramas: str = "panoramas"
    features: str = "features.json"
    agents: str = "agents"
    vote_table: str = "votes.json"
    output: str = "results"


@dataclass(frozen=True)
class ExperimentConfig:
    paths: Paths = field(default_factory=Paths)
    scene: SceneConfig | None = field(default_factory=SceneConfig)
    strategies: tuple[Any, ...] = DEFAULT_STRATEGIES
    feature_dim: int = 8
    instr_dim: int = DEFAULT_INSTR_DIM
    epochs: int = 500
    lr: float = 20.0
    step_limit: int = DEFAULT_STEP_LIMIT
    success_radius: float = DEFAULT_SUCCESS_RADIUS
    seeds: Seeds = field(default_factory=Seeds)
    base_dir: str = field(default=".", compare=False)

    def __post_init__(self) -> None:
        for name in ("feature_dim", "instr_dim", "step_limit"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.epochs < 0:
            raise ConfigError(f"epochs must be >= 0, got {self.epochs}")
        if not self.success_radius > 0:
            raise ConfigError(f"success_radius must be positive, got {self.success_radius}")
        if self.lr < 0:
            raise ConfigError(f"lr must be >= 0, got {self.lr}")
        if not self.strategies:
            raise ConfigError("at least one strategy is required")
        names = [strategy_name(s) for s in self.strategies]
        dupes = sorted({n for n in names if names.count(n) > 1})
        if dupes:
            raise ConfigError(f"duplicate strategies {dupes}")

    @property
    def root(self) -> Path:
        return (Path(self.base_dir) / self.paths.workdir).resolve()

    def path(self, name: str) -> Path:
        """Absolute location of one of the configured artifacts."""
        if name == "workdir":
            return self.root
        return (self.root / getattr(self.paths, name)).resolve()

    def to_json(self) -> dict:
        out = asdict(self)
        del out["base_dir"]
        out["strategies"] = [dict(s) if isinstance(s, Mapping) else s for s in self.strategies]
        if self.scene is not None:
            out["scene"]["fg_area"] = list(self.scene.fg_area)
        return out

    @classmethod
    def from_json(cls, data: Mapping[str, Any], base_dir: str | Path = ".") -> "ExperimentConfig":
        data = dict(data)
        unknown = set(data) - {f.name for f in fields(cls)} - {"base_dir"}
        if unknown:
            raise ConfigError(f"unknown config keys {sorted(unknown)}")
        data.pop("base_dir", None)
        try:
            if "paths" in data:
                data["paths"] = _sub(Paths, data["paths"])
            if "seeds" in data:
                data["seeds"] = _sub(Seeds, data["seeds"])
            if data.get("scene") is not None:
                scene = dict(data["scene"])
                if "fg_area" in scene:
                    scene["fg_area"] = tuple(float(x) for x in scene["fg_area"])
                data["scene"] = _sub(SceneConfig, scene)
            if "strategies" in data:
                data["strategies"] = tuple(data["strategies"])
            cfg = cls(**data, base_dir=str(base_dir))
        except TypeError as exc:
            raise ConfigError(str(exc)) from None
        for s in cfg.strategies:
            _check_strategy(s)
        return cfg

    def with_seeds(self, scene: int | None = None, train: int | None = None,
                   episode: int | None = None) -> "ExperimentConfig":
        s = self.seeds
        seeds = Seeds(s.scene if scene is None else scene, s.train if train is None else train,
                      s.episode if episode is None else episode)
        return replace(self, seeds=seeds)


def _sub(cls, data: Mapping[str, Any]):
    unknown = set(data) - {f.name for f in fields(cls)}
    if unknown:
        raise ConfigError(f"unknown {cls.__name__} keys {sorted(unknown)}")
    return cls(**data)


def strategy_name(spec: Any) -> str:
    if spec == RANDOM_WALK:
        return RANDOM_WALK
    if isinstance(spec, Mapping):
        name = str(spec.get("strategy", ""))
        kind = spec.get("kind")
    else:
        name, _, kind = str(spec).partition(":")
    if name == "cofa":
        return "cofa"
    return f"{name}-{kind}" if kind else name


def _check_strategy(spec: Any) -> None:
    if spec == RANDOM_WALK:
        return
    try:
        # Vote tables are produced by the pipeline, so only the shape is checked here.
        if isinstance(spec, Mapping):
            spec = {k: v for k, v in spec.items() if k != "vote_table"}
        parse_strategy(spec)
    except (ValueError, KeyError) as exc:
        raise ConfigError(f"bad strategy {spec!r}: {exc}") from None


def load_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file {path} does not exist") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"cannot parse config {path}: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigError(f"config {path} must hold a JSON object")
    return ExperimentConfig.from_json(data, base_dir=path.resolve().parent)


def save_config(cfg: ExperimentConfig, path: str | Path) -> None:
    Path(path).write_text(json.dumps(cfg.to_json(), indent=1, sort_keys=True) + "\n")
