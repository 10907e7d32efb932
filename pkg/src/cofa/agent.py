"""Linear navigation policies, one per feature kind, and the preference score.

A policy scores every candidate action with a single weight vector applied to
``concat(current_feature, candidate_feature, instruction_embedding)``.
"""

from __future__ import annotations

import hashlib
import json
import math
import re
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .featurestore import FeatureKind

STOP = "<STOP>"
DEFAULT_INSTR_DIM = 16

_TOKEN = re.compile(r"[a-z0-9]+")


class PolicyError(ValueError):
    pass


class NonFiniteLossError(PolicyError):
    pass


@dataclass(frozen=True)
class InstructionRecord:
    text: str
    embedding: np.ndarray

    @classmethod
    def from_text(cls, text: str, dim: int = DEFAULT_INSTR_DIM) -> "InstructionRecord":
        return cls(text, embed_instruction(text, dim))


def embed_instruction(text: str, dim: int = DEFAULT_INSTR_DIM) -> np.ndarray:
    """Hashed bag-of-tokens, L2-normalised. Empty text maps to the zero vector."""
    if dim <= 0:
        raise ValueError(f"instruction dim must be positive, got {dim}")
    vec = np.zeros(dim)
    for tok in _TOKEN.findall(text.lower()):
        h = int.from_bytes(hashlib.blake2b(tok.encode(), digest_size=8).digest(), "little")
        vec[h % dim] += 1.0
    norm = np.linalg.norm(vec)
    return vec / norm if norm > 0 else vec


@dataclass(frozen=True)
class ActionContext:
    """One decision point: candidate actions are the neighbors followed by STOP.

    ``candidate_features`` has one row per candidate, including the STOP row.
    """

    viewpoint_id: str
    candidate_ids: tuple[str, ...]
    current_feature: np.ndarray
    candidate_features: np.ndarray
    gt_index: int
    sample_id: str | None = None

    def __post_init__(self) -> None:
        if not self.candidate_ids or self.candidate_ids[-1] != STOP:
            raise PolicyError(f"context at {self.viewpoint_id!r} must end with the STOP candidate")
        feats = np.asarray(self.candidate_features, dtype=np.float64)
        if feats.ndim != 2 or feats.shape[0] != len(self.candidate_ids):
            raise PolicyError(
                f"context at {self.viewpoint_id!r}: {len(self.candidate_ids)} candidates but features of shape {feats.shape}"
            )
        if not 0 <= self.gt_index < len(self.candidate_ids):
            raise PolicyError(f"context at {self.viewpoint_id!r}: gt index {self.gt_index} out of range")
        object.__setattr__(self, "candidate_features", feats)
        object.__setattr__(self, "current_feature", np.asarray(self.current_feature, dtype=np.float64))


def build_context(
    viewpoint_id: str,
    current_feature: np.ndarray,
    neighbor_ids: Sequence[str],
    neighbor_features: Sequence[np.ndarray],
    gt: str | int = STOP,
    sample_id: str | None = None,
) -> ActionContext:
    """Assemble candidates ``neighbors + [STOP]``.

    The STOP row carries the current observation feature ("stay here"), so a
    linear scorer can compare staying against every move.
    """
    ids = tuple(neighbor_ids) + (STOP,)
    cur = np.asarray(current_feature, dtype=np.float64)
    rows = [np.asarray(f, dtype=np.float64) for f in neighbor_features] + [cur]
    if isinstance(gt, str):
        try:
            gt_index = ids.index(gt)
        except ValueError:
            raise PolicyError(f"ground-truth action {gt!r} is not a candidate at {viewpoint_id!r}") from None
    else:
        gt_index = int(gt)
    return ActionContext(viewpoint_id, ids, cur, np.vstack(rows), gt_index, sample_id)


@dataclass(frozen=True)
class PolicyAgent:
    kind: FeatureKind
    feature_dim: int
    instr_dim: int
    weights: np.ndarray
    lr: float = 0.0
    seed: int = 0
    epochs: int = 0
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self) -> None:
        w = np.array(self.weights, dtype=np.float64)
        if w.shape != (2 * self.feature_dim + self.instr_dim,):
            raise PolicyError(
                f"weights have shape {w.shape}, expected ({2 * self.feature_dim + self.instr_dim},)"
            )
        if not np.all(np.isfinite(w)):
            raise PolicyError("policy weights must be finite")
        w.flags.writeable = False
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "kind", FeatureKind.parse(self.kind))

    @classmethod
    def init(cls, kind: FeatureKind | str, feature_dim: int, instr_dim: int = DEFAULT_INSTR_DIM, seed: int = 0,
             scale: float = 0.01) -> "PolicyAgent":
        rng = np.random.default_rng(seed)
        w = scale * rng.standard_normal(2 * feature_dim + instr_dim)
        return cls(FeatureKind.parse(kind), feature_dim, instr_dim, w, seed=seed)

    @property
    def n_params(self) -> int:
        return self.weights.size


def _design(agent_dims: tuple[int, int], ctx: ActionContext, instr: InstructionRecord) -> np.ndarray:
    fdim, idim = agent_dims
    k = len(ctx.candidate_ids)
    if ctx.current_feature.shape != (fdim,) or ctx.candidate_features.shape[1] != fdim:
        raise PolicyError(
            f"feature dim mismatch at {ctx.viewpoint_id!r}: policy expects {fdim}, "
            f"got current {ctx.current_feature.shape} / candidates {ctx.candidate_features.shape}"
        )
    if instr.embedding.shape != (idim,):
        raise PolicyError(f"instruction dim mismatch: policy expects {idim}, got {instr.embedding.shape}")
    return np.hstack([np.tile(ctx.current_feature, (k, 1)), ctx.candidate_features, np.tile(instr.embedding, (k, 1))])


def score_actions(agent: PolicyAgent, ctx: ActionContext, instr: InstructionRecord) -> np.ndarray:
    return _design((agent.feature_dim, agent.instr_dim), ctx, instr) @ agent.weights


def cross_entropy(logits: Sequence[float], gt_index: int) -> float:
    """Negative log-softmax of the ground-truth entry, stabilised by max-subtraction."""
    z = np.asarray(logits, dtype=np.float64)
    if z.size == 0:
        raise PolicyError("cross_entropy of empty logits")
    if not 0 <= gt_index < z.size:
        raise PolicyError(f"gt index {gt_index} out of range for {z.size} logits")
    m = z.max()
    lse = m + math.log(np.exp(z - m).sum())
    return max(0.0, float(lse - z[gt_index]))


def preference_score(agent: PolicyAgent, ctx: ActionContext, instr: InstructionRecord) -> float:
    return cross_entropy(score_actions(agent, ctx, instr), ctx.gt_index)


@dataclass
class Batch:
    """Flattened dataset: one design row per candidate, segmented by context."""

    X: np.ndarray
    starts: np.ndarray
    seg: np.ndarray
    gt_rows: np.ndarray
    sample_ids: list[str]

    @property
    def n(self) -> int:
        return self.starts.size


def make_batch(dataset: Sequence[tuple[ActionContext, InstructionRecord]], feature_dim: int, instr_dim: int) -> Batch:
    if not dataset:
        raise PolicyError("empty training dataset")
    blocks, starts, seg, gt_rows, ids = [], [], [], [], []
    row = 0
    for i, (ctx, instr) in enumerate(dataset):
        block = _design((feature_dim, instr_dim), ctx, instr)
        blocks.append(block)
        starts.append(row)
        seg.extend([i] * block.shape[0])
        gt_rows.append(row + ctx.gt_index)
        ids.append(ctx.sample_id if ctx.sample_id is not None else str(i))
        row += block.shape[0]
    return Batch(np.vstack(blocks), np.array(starts), np.array(seg), np.array(gt_rows), ids)


def per_sample_loss(weights: np.ndarray, batch: Batch) -> tuple[np.ndarray, np.ndarray]:
    """Per-context cross-entropy and the softmax probabilities of every row."""
    z = batch.X @ weights
    m = np.maximum.reduceat(z, batch.starts)
    e = np.exp(z - m[batch.seg])
    s = np.add.reduceat(e, batch.starts)
    losses = np.log(s) + m - z[batch.gt_rows]
    return losses, e / s[batch.seg]


def loss_and_grad(weights: np.ndarray, batch: Batch) -> tuple[float, np.ndarray]:
    losses, p = per_sample_loss(weights, batch)
    resid = p.copy()
    resid[batch.gt_rows] -= 1.0
    return float(losses.mean()), batch.X.T @ resid / batch.n


def _check_finite(loss: float, weights: np.ndarray, batch: Batch, epoch: int) -> None:
    if math.isfinite(loss):
        return
    losses, _ = per_sample_loss(weights, batch)
    bad = int(np.flatnonzero(~np.isfinite(losses))[0]) if not np.all(np.isfinite(losses)) else 0
    raise NonFiniteLossError(f"non-finite loss at epoch {epoch}, sample {batch.sample_ids[bad]!r}")


def train(
    agent: PolicyAgent,
    dataset: Sequence[tuple[ActionContext, InstructionRecord]],
    epochs: int,
    lr: float,
    seed: int | None = None,
) -> tuple[PolicyAgent, list[float]]:
    """Full-batch gradient descent on mean cross-entropy.

    Returns the trained agent and the mean loss after each epoch's update.
    """
    if epochs < 0:
        raise PolicyError("epochs must be non-negative")
    batch = make_batch(dataset, agent.feature_dim, agent.instr_dim)
    w = agent.weights.copy()
    curve: list[float] = []
    # Overflow surfaces as a NonFiniteLossError naming the sample, not as a warning.
    with np.errstate(over="ignore", invalid="ignore"):
        loss, grad = loss_and_grad(w, batch)
        _check_finite(loss, w, batch, 0)
        for epoch in range(1, epochs + 1):
            w = w - lr * grad
            loss, grad = loss_and_grad(w, batch)
            _check_finite(loss, w, batch, epoch)
            curve.append(loss)
    trained = replace(
        agent,
        weights=w,
        lr=lr,
        seed=agent.seed if seed is None else seed,
        epochs=agent.epochs + epochs,
        meta={**agent.meta, "final_loss": loss},
    )
    return trained, curve


# -- checkpoints -----------------------------------------------------------------


def save_agent(agent: PolicyAgent, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    blob = path.with_suffix(".bin")
    blob.write_bytes(agent.weights.astype("<f4").tobytes())
    manifest = {
        "kind": agent.kind.value,
        "feature_dim": agent.feature_dim,
        "instr_dim": agent.instr_dim,
        "lr": agent.lr,
        "seed": agent.seed,
        "epochs": agent.epochs,
        "blob": blob.name,
        "meta": agent.meta,
    }
    path.write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    return path


def load_agent(path: str | Path) -> PolicyAgent:
    path = Path(path)
    m = json.loads(path.read_text())
    fdim, idim = int(m["feature_dim"]), int(m["instr_dim"])
    raw = (path.parent / m.get("blob", path.with_suffix(".bin").name)).read_bytes()
    w = np.frombuffer(raw, dtype="<f4").astype(np.float64)
    if w.size != 2 * fdim + idim:
        raise PolicyError(f"checkpoint {path}: {w.size} weights, expected {2 * fdim + idim}")
    return PolicyAgent(FeatureKind.parse(m["kind"]), fdim, idim, w, float(m["lr"]), int(m["seed"]),
                       int(m["epochs"]), dict(m.get("meta", {})))
