"""Synthetic scans for exercising the full pipeline without Matterport data.

A scene is a lattice-embedded graph made of a corridor spine and object rooms
hanging off it. Every trajectory leads to one target viewpoint inside a room.
Each viewpoint carries a "progress" signal (closeness to the target) in both
image regions, cleanly in one and blurred by noise in the other: the
foreground is the clean region in object rooms, the background in corridors.
The two regions encode progress on different offsets (foreground ``p/2``,
background ``0.5 + p/2``) and the foreground area varies per viewpoint, so
the unmasked view mixes the two encodings with a viewpoint-dependent weight
and ranks candidates less reliably than either region alone. Pixels are
painted so the pooled extractor recovers the designed vectors exactly.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .agent import DEFAULT_INSTR_DIM, InstructionRecord
from .disentangle import CHANNELS, N_VIEWS, BinaryMask, Panorama, ViewImage, extract_features, write_panorama
from .featurestore import FeatureKind, FeatureStore, write_store
from .navgraph import NavGraph, Viewpoint, _edge_key, save_graph
from .voting import Trajectory, save_trajectories

ROOM_TYPES = {
    "kitchen": ["mug", "sink", "stove", "fridge", "kettle"],
    "bedroom": ["bed", "pillow", "lamp", "wardrobe", "nightstand"],
    "bathroom": ["towel", "bathtub", "mirror", "toilet", "soap"],
    "living room": ["sofa", "television", "cushion", "rug", "bookshelf"],
    "office": ["desk", "monitor", "chair", "printer", "keyboard"],
}
_STEPS = ((1, 0), (-1, 0), (0, 1), (0, -1))


class SceneError(ValueError):
    pass


@dataclass
class Scene:
    graph: NavGraph
    panoramas: list[Panorama]
    trajectories: list[Trajectory]
    designed: dict[tuple[str, FeatureKind], np.ndarray] = field(default_factory=dict, repr=False)

    def region(self, vp_id: str) -> str:
        return self.graph.viewpoints[vp_id].attrs["region"]


def _grow(rng: np.random.Generator, n_corr: int, n_room: int):
    cells: dict[tuple[int, int], int] = {}
    region: list[str] = []
    room_of: list[int] = []
    tree: list[tuple[int, int]] = []
    pos: list[tuple[int, int]] = []

    def free_around(idx: int) -> list[tuple[int, int]]:
        x, y = pos[idx]
        return [(x + dx, y + dy) for dx, dy in _STEPS if (x + dx, y + dy) not in cells]

    def place(cell: tuple[int, int], reg: str, room: int, parent: int | None) -> None:
        idx = len(pos)
        cells[cell] = idx
        pos.append(cell)
        region.append(reg)
        room_of.append(room)
        if parent is not None:
            tree.append((parent, idx))

    def attach(pool: list[int]) -> tuple[int, tuple[int, int]]:
        open_pool = [i for i in pool if free_around(i)] or [i for i in range(len(pos)) if free_around(i)]
        parent = open_pool[int(rng.integers(len(open_pool)))]
        opts = free_around(parent)
        return parent, opts[int(rng.integers(len(opts)))]

    n_rooms = 0
    for i in range(n_corr):
        if i == 0:
            place((0, 0), "corridor", -1, None)
        else:
            # Extend from recent corridor nodes so the spine stays elongated.
            parent, cell = attach(list(range(max(0, len(pos) - 3), len(pos))))
            place(cell, "corridor", -1, parent)
    for _ in range(n_room):
        room_nodes = [i for i, r in enumerate(region) if r == "room"]
        corridor_nodes = [i for i, r in enumerate(region) if r == "corridor"]
        new_room = not room_nodes or (corridor_nodes and rng.random() < 0.2)
        if not pos:
            place((0, 0), "room", 0, None)
            n_rooms = 1
        elif new_room:
            parent, cell = attach(corridor_nodes or room_nodes)
            place(cell, "room", n_rooms, parent)
            n_rooms += 1
        else:
            parent, cell = attach(room_nodes)
            place(cell, "room", room_of[parent], parent)
    return cells, pos, region, room_of, tree


def _paint(rng: np.random.Generator, fg: np.ndarray, bg: np.ndarray, size: int, vp_id: str,
           fg_area: float) -> Panorama:
    dim = fg.size
    block = np.empty(N_VIEWS * CHANNELS, dtype=int)
    for b, idx in enumerate(np.array_split(np.arange(N_VIEWS * CHANNELS), dim)):
        block[idx] = b
    views, masks = [], []
    for j in range(N_VIEWS):
        # Rectangle of roughly ``fg_area`` of the view, leaving both regions non-empty.
        h = int(rng.integers(1, size))
        w = int(np.clip(round(fg_area * size * size / h), 1, size - 1))
        r0 = int(rng.integers(0, size - h + 1))
        c0 = int(rng.integers(0, size - w + 1))
        bits = np.zeros((size, size), dtype=np.uint8)
        bits[r0 : r0 + h, c0 : c0 + w] = 1
        chan = block[CHANNELS * j : CHANNELS * (j + 1)]
        px = np.where(bits[:, :, None] == 1, fg[chan][None, None, :], bg[chan][None, None, :]).astype(np.float32)
        views.append(ViewImage(size, size, px))
        masks.append(BinaryMask(size, size, bits))
    return Panorama(vp_id, tuple(views), tuple(masks))


def generate_scene(
    seed: int,
    node_count: int,
    corridor_fraction: float,
    dim: int,
    *,
    image_size: int = 6,
    spacing: float = 2.0,
    min_goal_distance: float = 3.0,
    off_noise: float = 0.05,
    fg_area: tuple[float, float] = (0.05, 0.9),
    instr_dim: int = DEFAULT_INSTR_DIM,
    scan_id: str | None = None,
) -> Scene:
    """Build a deterministic synthetic scan.

    Args:
        seed: Scene seed; identical arguments give identical scenes.
        node_count: Number of viewpoints, at least 2.
        corridor_fraction: Share of viewpoints on the corridor spine, in [0, 1].
        dim: Feature dimension, between 2 and 108.
        image_size: Side length of each square view image (>= 2).
        min_goal_distance: Minimum start-to-goal geodesic for a trajectory.
        off_noise: Standard deviation of the progress error in the less
            informative region.
        fg_area: Range of the per-viewpoint foreground share of each view.
    """
    if node_count < 2:
        raise SceneError(f"node_count must be >= 2, got {node_count}")
    if not 0.0 <= corridor_fraction <= 1.0:
        raise SceneError(f"corridor_fraction must be in [0, 1], got {corridor_fraction}")
    if not 2 <= dim <= N_VIEWS * CHANNELS:
        raise SceneError(f"dim must be in [2, {N_VIEWS * CHANNELS}], got {dim}")
    if image_size < 2:
        raise SceneError("image_size must be >= 2")
    if off_noise < 0:
        raise SceneError("off_noise must be non-negative")
    if not 0.0 < fg_area[0] <= fg_area[1] < 1.0:
        raise SceneError(f"fg_area must satisfy 0 < lo <= hi < 1, got {fg_area}")
    rng = np.random.default_rng(seed)
    scan_id = scan_id or f"synth{seed}"
    n_corr = int(round(corridor_fraction * node_count))
    cells, pos, region, room_of, tree = _grow(rng, n_corr, node_count - n_corr)
    n = len(pos)
    ids = [f"vp{i:03d}" for i in range(n)]

    edges = {tuple(sorted(e)) for e in tree}
    for (x, y), i in cells.items():
        for dx, dy in ((1, 0), (0, 1)):
            j = cells.get((x + dx, y + dy))
            if j is None or (i, j) in edges or (j, i) in edges:
                continue
            same = region[i] == region[j] and room_of[i] == room_of[j]
            if same and rng.random() < 0.35:
                edges.add((min(i, j), max(i, j)))
    coords = [
        (float(x * spacing + rng.uniform(-0.15, 0.15)), float(y * spacing + rng.uniform(-0.15, 0.15)), 0.0)
        for x, y in pos
    ]

    room_types = list(ROOM_TYPES)
    n_rooms = max(room_of) + 1
    rtype = [room_types[int(rng.integers(len(room_types)))] for _ in range(n_rooms)]
    objects: dict[int, list[tuple[str, str]]] = {}
    n_obj = 0
    for i in range(n):
        if region[i] != "room":
            continue
        vocab = ROOM_TYPES[rtype[room_of[i]]]
        picks = rng.choice(len(vocab), size=int(rng.integers(1, 4)), replace=False)
        objects[i] = []
        for p in sorted(picks):
            objects[i].append((f"obj{n_obj:03d}", vocab[p]))
            n_obj += 1

    nbrs: dict[int, list[int]] = {i: [] for i in range(n)}
    for a, b in sorted(edges):
        nbrs[a].append(b)
        nbrs[b].append(a)
    weights = {
        _edge_key(ids[a], ids[b]): float(np.linalg.norm(np.subtract(coords[a], coords[b]))) for a, b in edges
    }
    viewpoints = {}
    for i in range(n):
        attrs = {"region": region[i]}
        if region[i] == "room":
            attrs["room_type"] = rtype[room_of[i]]
            attrs["room_id"] = int(room_of[i])
            attrs["object_labels"] = [lab for _, lab in objects[i]]
        viewpoints[ids[i]] = Viewpoint(
            ids[i], coords[i], tuple(ids[j] for j in nbrs[i]), tuple(o for o, _ in objects.get(i, [])), attrs
        )
    emb = {o: rng.uniform(0, 1, dim) for i in sorted(objects) for o, _ in objects[i]}
    graph = NavGraph(scan_id, viewpoints, weights, emb if emb else None)

    rooms = [i for i in range(n) if region[i] == "room"]
    goal_idx = rooms[int(rng.integers(len(rooms)))] if rooms else int(rng.integers(n))
    goal = ids[goal_idx]
    dist = {v: graph.geodesic(v, goal) for v in ids}
    dmax = max(dist.values()) or 1.0

    designed: dict[tuple[str, FeatureKind], np.ndarray] = {}
    panoramas = []
    for i, vp in enumerate(ids):
        progress = 1.0 - dist[vp] / dmax
        # The less informative region misreads progress by one scalar error
        # shared across dims, so a linear policy cannot filter it out.
        err = rng.normal(0, off_noise)
        fg_err, bg_err = (0.0, err) if region[i] == "room" else (err, 0.0)
        fg = np.clip(0.5 * (progress + fg_err + rng.normal(0, 0.01, dim)), 0, 1)
        bg = np.clip(0.5 + 0.5 * (progress + bg_err + rng.normal(0, 0.01, dim)), 0, 1)
        fg, bg = fg.astype(np.float32).astype(np.float64), bg.astype(np.float32).astype(np.float64)
        pano = _paint(rng, fg, bg, image_size, vp, float(rng.uniform(*fg_area)))
        panoramas.append(pano)
        designed[(vp, FeatureKind.FG)] = fg
        designed[(vp, FeatureKind.BG)] = bg

    # Instructions name the goal's most salient object: the one whose embedding
    # best matches the goal's foreground feature.
    target_obj = None
    if goal_idx in objects:
        fg_goal = designed[(goal, FeatureKind.FG)]
        target_obj = max(objects[goal_idx], key=lambda o: float(emb[o[0]] @ fg_goal))
    starts = [v for v in ids if dist[v] > min_goal_distance]
    # Every path follows one shortest-path tree into the goal. Trajectories
    # starting at its leaves form the train split and pass through every other
    # viewpoint, so each val viewpoint has been voted on.
    inner = {v for s0 in starts for v in graph.shortest_path(s0, goal)[1:]}
    goal_room = rtype[room_of[goal_idx]] if region[goal_idx] == "room" else "corridor"
    verbs = ("walk", "head", "go", "move")
    trajs = []
    for rank, k in enumerate(rng.permutation(len(starts))):
        start = starts[k]
        path = graph.shortest_path(start, goal)
        via = "through the corridor " if any(region[ids.index(v)] == "corridor" for v in path) else ""
        text = f"{verbs[rank % len(verbs)]} {via}to the {goal_room}"
        if target_obj is not None:
            text += f" and find the {target_obj[1]}"
        split = "val" if start in inner else "train"
        trajs.append(Trajectory(
            traj_id=f"{scan_id}_{start}",
            scan_id=scan_id,
            path=tuple(path),
            instruction=InstructionRecord.from_text(text, instr_dim),
            goal_viewpoint=goal,
            target_object=target_obj[0] if target_obj else None,
            split=split,
        ))
    trajs.sort(key=lambda t: (t.split != "train", t.traj_id))
    return Scene(graph, panoramas, trajs, designed)


def extract_store(panoramas, dim: int, scan_id: str | None = None) -> FeatureStore:
    records = {}
    for pano in panoramas:
        for kind in FeatureKind:
            records[(pano.viewpoint_id, kind)] = extract_features(pano, kind.value, dim)
    return FeatureStore(dim, records, scan_id=scan_id)


def write_scene(scene: Scene, out_dir: str | Path, *, graph: str | Path | None = None,
                trajectories: str | Path | None = None, panoramas: str | Path | None = None) -> dict[str, Path]:
    """Write the graph, trajectories and panoramas; defaults live under ``out_dir``."""
    out = Path(out_dir)
    paths = {
        "graph": Path(graph) if graph else out / "graph.json",
        "trajectories": Path(trajectories) if trajectories else out / "trajectories.jsonl",
        "panoramas": Path(panoramas) if panoramas else out / "panoramas",
    }
    for key in ("graph", "trajectories"):
        paths[key].parent.mkdir(parents=True, exist_ok=True)
    save_graph(scene.graph, paths["graph"])
    save_trajectories(scene.trajectories, paths["trajectories"])
    for pano in scene.panoramas:
        write_panorama(pano, paths["panoramas"])
    return paths
