from __future__ import annotations

import functools

import numpy as np
import pytest
from hypothesis import settings

from cofa.navgraph import graph_from_json
from cofa.scene import extract_store, generate_scene

settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile("default")


def graph_of(edges, positions=None, scan_id="s"):
    """Graph from undirected ``(u, v, w)`` triples; both directions are listed."""
    names = sorted({e[0] for e in edges} | {e[1] for e in edges} | set(positions or {}))
    positions = positions or {}
    vps = [{"id": n, "position": list(positions.get(n, (float(i), 0.0, 0.0)))} for i, n in enumerate(names)]
    directed = []
    for e in edges:
        u, v = e[0], e[1]
        rest = list(e[2:])
        directed += [[u, v, *rest], [v, u, *rest]]
    return graph_from_json({"scan_id": scan_id, "viewpoints": vps, "edges": directed})


@functools.lru_cache(maxsize=None)
def small_scene_data():
    scene = generate_scene(7, 16, 0.5, 4)
    return scene, extract_store(scene.panoramas, 4, scene.graph.scan_id)


@pytest.fixture(scope="session")
def small_scene():
    return small_scene_data()


@pytest.fixture
def rng():
    return np.random.default_rng(0)


def write_config(directory, *, seed=7, nodes=16, epochs=60, **extra):
    """Small experiment config in ``directory`` (workdir = the directory itself)."""
    import json

    data = {"scene": {"node_count": nodes}, "seeds": {"scene": seed, "train": 0, "episode": 0},
            "epochs": epochs, **extra}
    path = directory / "run.json"
    path.write_text(json.dumps(data))
    return path
