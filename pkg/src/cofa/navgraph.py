"""Discrete navigation graph: viewpoints, weighted edges and geodesic distances."""

from __future__ import annotations

import heapq
import json
import math
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

import numpy as np


class GraphError(ValueError):
    """Raised when a graph file is malformed or violates a graph invariant."""


class AsymmetricEdgeError(GraphError):
    pass


class DisconnectedGraphError(GraphError):
    pass


class UnknownViewpointError(KeyError):
    pass


@dataclass(frozen=True)
class Viewpoint:
    id: str
    position: tuple[float, float, float]
    neighbor_ids: tuple[str, ...] = ()
    object_ids: tuple[str, ...] = ()
    # Free-form annotations carried through from the graph file (region, room type).
    attrs: Mapping[str, Any] = field(default_factory=dict, compare=False)


def _edge_key(u: str, v: str) -> tuple[str, str]:
    return (u, v) if u <= v else (v, u)


class NavGraph:
    """Immutable scan-level graph with memoized single-source geodesics.

    Args:
        scan_id: Identifier of the scan this graph belongs to.
        viewpoints: Viewpoints keyed by id; neighbor lists must be symmetric.
        edge_weights: Weight per unordered pair ``(min_id, max_id)``.
        object_embeddings: Optional table of object id -> embedding vector,
            used by the grounding head during rollout.
    """

    def __init__(
        self,
        scan_id: str,
        viewpoints: Mapping[str, Viewpoint],
        edge_weights: Mapping[tuple[str, str], float],
        object_embeddings: Mapping[str, np.ndarray] | None = None,
    ) -> None:
        self.scan_id = scan_id
        self.viewpoints: dict[str, Viewpoint] = dict(viewpoints)
        self.edge_weights: dict[tuple[str, str], float] = dict(edge_weights)
        self.object_embeddings = (
            None if object_embeddings is None else {k: np.asarray(v, dtype=np.float64) for k, v in object_embeddings.items()}
        )
        self._cache: dict[str, tuple[dict[str, float], dict[str, str | None]]] = {}
        self._lock = threading.Lock()
        self.validate()

    def __len__(self) -> int:
        return len(self.viewpoints)

    def __contains__(self, vp_id: object) -> bool:
        return vp_id in self.viewpoints

    def ids(self) -> list[str]:
        return list(self.viewpoints)

    def neighbors(self, vp_id: str) -> tuple[str, ...]:
        return self._get(vp_id).neighbor_ids

    def weight(self, u: str, v: str) -> float:
        try:
            return self.edge_weights[_edge_key(u, v)]
        except KeyError:
            raise GraphError(f"no edge between {u!r} and {v!r}") from None

    def _get(self, vp_id: str) -> Viewpoint:
        try:
            return self.viewpoints[vp_id]
        except KeyError:
            raise UnknownViewpointError(f"unknown viewpoint {vp_id!r} in scan {self.scan_id!r}") from None

    def validate(self) -> None:
        for vp in self.viewpoints.values():
            if len(set(vp.neighbor_ids)) != len(vp.neighbor_ids):
                raise GraphError(f"viewpoint {vp.id!r} has duplicate neighbors")
            for n in vp.neighbor_ids:
                if n == vp.id:
                    raise GraphError(f"self-loop at viewpoint {vp.id!r}")
                if n not in self.viewpoints:
                    raise GraphError(f"edge {vp.id!r}->{n!r} references an unknown viewpoint")
                if vp.id not in self.viewpoints[n].neighbor_ids:
                    raise AsymmetricEdgeError(f"edge {vp.id!r}->{n!r} has no reverse edge {n!r}->{vp.id!r}")
                w = self.edge_weights.get(_edge_key(vp.id, n))
                if w is None:
                    raise GraphError(f"edge {vp.id!r}-{n!r} has no weight")
                if not (math.isfinite(w) and w > 0):
                    raise GraphError(f"edge {vp.id!r}-{n!r} has non-positive weight {w}")
        if not self.viewpoints:
            raise GraphError(f"scan {self.scan_id!r} has no viewpoints")
        start = next(iter(self.viewpoints))
        seen = {start}
        stack = [start]
        while stack:
            for n in self.viewpoints[stack.pop()].neighbor_ids:
                if n not in seen:
                    seen.add(n)
                    stack.append(n)
        if len(seen) != len(self.viewpoints):
            missing = sorted(set(self.viewpoints) - seen)
            raise DisconnectedGraphError(
                f"scan {self.scan_id!r} is disconnected: viewpoint {missing[0]!r} unreachable from {start!r}"
            )

    def _dijkstra(self, source: str) -> tuple[dict[str, float], dict[str, str | None]]:
        dist = {source: 0.0}
        pred: dict[str, str | None] = {source: None}
        heap = [(0.0, source)]
        done: set[str] = set()
        while heap:
            d, u = heapq.heappop(heap)
            if u in done:
                continue
            done.add(u)
            for n in self.viewpoints[u].neighbor_ids:
                nd = d + self.edge_weights[_edge_key(u, n)]
                if n not in dist or nd < dist[n]:
                    dist[n] = nd
                    pred[n] = u
                    heapq.heappush(heap, (nd, n))
        return dist, pred

    def _source(self, source: str) -> tuple[dict[str, float], dict[str, str | None]]:
        self._get(source)
        cached = self._cache.get(source)
        if cached is not None:
            return cached
        result = self._dijkstra(source)
        with self._lock:
            return self._cache.setdefault(source, result)

    def geodesic(self, u: str, v: str) -> float:
        self._get(v)
        return self._source(u)[0][v]

    def shortest_path(self, u: str, v: str) -> list[str]:
        """Shortest path from ``u`` to ``v`` inclusive of both endpoints."""
        self._get(v)
        _, pred = self._source(v)
        # Walk predecessors of the tree rooted at v, which reads u -> v directly.
        path = [u]
        while path[-1] != v:
            nxt = pred[path[-1]]
            assert nxt is not None
            path.append(nxt)
        return path

    def warm_cache(self, sources: Iterable[str] | None = None) -> None:
        for s in self.ids() if sources is None else sources:
            self._source(s)

    def to_json(self) -> dict[str, Any]:
        vps = []
        for vp in self.viewpoints.values():
            rec: dict[str, Any] = {"id": vp.id, "position": list(vp.position), "objects": list(vp.object_ids)}
            rec.update(vp.attrs)
            vps.append(rec)
        edges = []
        for vp in self.viewpoints.values():
            for n in vp.neighbor_ids:
                edges.append([vp.id, n, self.edge_weights[_edge_key(vp.id, n)]])
        out: dict[str, Any] = {"scan_id": self.scan_id, "viewpoints": vps, "edges": edges}
        if self.object_embeddings is not None:
            out["object_embeddings"] = {k: v.tolist() for k, v in sorted(self.object_embeddings.items())}
        return out


def graph_from_json(data: Mapping[str, Any]) -> NavGraph:
    """Build a validated graph from the parsed JSON graph format.

    Edges are directed entries ``[u, v, weight?]``; every edge must be listed in
    both directions. A missing weight defaults to the Euclidean distance between
    the endpoint positions.
    """
    try:
        scan_id = str(data["scan_id"])
        raw_vps = data["viewpoints"]
        raw_edges = data["edges"]
    except (KeyError, TypeError) as exc:
        raise GraphError(f"graph file missing field: {exc}") from None

    positions: dict[str, tuple[float, float, float]] = {}
    meta: dict[str, dict[str, Any]] = {}
    for rec in raw_vps:
        vid = str(rec["id"])
        if vid in positions:
            raise GraphError(f"duplicate viewpoint {vid!r}")
        pos = tuple(float(x) for x in rec["position"])
        if len(pos) != 3 or not all(math.isfinite(x) for x in pos):
            raise GraphError(f"viewpoint {vid!r} needs a finite 3-vector position")
        positions[vid] = pos  # type: ignore[assignment]
        meta[vid] = rec

    directed: dict[tuple[str, str], float | None] = {}
    order: dict[str, list[str]] = {vid: [] for vid in positions}
    for edge in raw_edges:
        if len(edge) not in (2, 3):
            raise GraphError(f"malformed edge {edge!r}")
        u, v = str(edge[0]), str(edge[1])
        for end in (u, v):
            if end not in positions:
                raise GraphError(f"edge {u!r}->{v!r} references unknown viewpoint {end!r}")
        if u == v:
            raise GraphError(f"self-loop at viewpoint {u!r}")
        if (u, v) in directed:
            raise GraphError(f"duplicate edge {u!r}->{v!r}")
        directed[(u, v)] = None if len(edge) == 2 or edge[2] is None else float(edge[2])
        order[u].append(v)

    weights: dict[tuple[str, str], float] = {}
    for (u, v), w in directed.items():
        if (v, u) not in directed:
            raise AsymmetricEdgeError(f"edge {u!r}->{v!r} has no reverse edge {v!r}->{u!r}")
        back = directed[(v, u)]
        if w is not None and back is not None and w != back:
            raise AsymmetricEdgeError(f"edge {u!r}-{v!r} weights differ by direction ({w} vs {back})")
        if w is None:
            w = back
        if w is None:
            w = float(np.linalg.norm(np.subtract(positions[u], positions[v])))
        if not (math.isfinite(w) and w > 0):
            raise GraphError(f"edge {u!r}-{v!r} has non-positive weight {w}")
        weights[_edge_key(u, v)] = w

    reserved = {"id", "position", "objects"}
    viewpoints = {
        vid: Viewpoint(
            id=vid,
            position=positions[vid],
            neighbor_ids=tuple(order[vid]),
            object_ids=tuple(str(o) for o in meta[vid].get("objects", [])),
            attrs={k: v for k, v in meta[vid].items() if k not in reserved},
        )
        for vid in positions
    }
    emb = data.get("object_embeddings")
    return NavGraph(scan_id, viewpoints, weights, emb)


def load_graph(path: str | Path) -> NavGraph:
    try:
        with open(path) as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise GraphError(f"cannot parse graph file {path}: {exc}") from None
    return graph_from_json(data)


def save_graph(graph: NavGraph, path: str | Path) -> None:
    with open(path, "w") as fh:
        json.dump(graph.to_json(), fh, indent=1, sort_keys=True)
        fh.write("\n")


def path_length(graph: NavGraph, path: Sequence[str]) -> float:
    """Sum of edge weights along consecutive viewpoints of ``path`` (correctly rounded)."""
    return math.fsum(graph.weight(a, b) for a, b in zip(path, path[1:]))
