"""Independent reference implementations used as test oracles."""

from __future__ import annotations

import numpy as np

ORDER = ("ori", "fg", "bg")


def brute_vote_table(entries):
    """entries: (traj_id, step, vp, {kind: score}) -> {vp: (final, {kind: count})}.

    Written without the library's helpers: argmin by sorting (score, order
    index) tuples, majority by sorting (-count, order index).
    """
    labels = {}
    for _, _, vp, scores in entries:
        label = sorted((scores[k], i, k) for i, k in enumerate(ORDER))[0][2]
        labels.setdefault(vp, []).append(label)
    out = {}
    for vp, ls in labels.items():
        counts = {k: sum(1 for x in ls if x == k) for k in ORDER}
        final = sorted((-counts[k], i, k) for i, k in enumerate(ORDER))[0][2]
        out[vp] = (final, counts)
    return out


def random_vote_instance(rng: np.random.Generator):
    """Up to 10 viewpoints and 8 trajectories; scores from a tiny grid to force ties."""
    n_vp = int(rng.integers(1, 11))
    n_traj = int(rng.integers(1, 9))
    vps = [f"v{i}" for i in range(n_vp)]
    grid = np.array([0.0, 0.5, 1.0, 1.5])
    entries = []
    for t in range(n_traj):
        path = rng.choice(vps, size=int(rng.integers(1, 7)))
        for step, vp in enumerate(path):
            if rng.random() < 0.5:
                scores = {k: float(rng.choice(grid)) for k in ORDER}
            else:
                scores = {k: float(rng.exponential()) for k in ORDER}
            entries.append((f"t{t}", step, str(vp), scores))
    return entries
