"""Per-viewpoint feature triples backed by a float32 blob and a JSON manifest.

Manifest layout::

    {"dim": 8, "blob": "features.bin", "scan_id": "scan0",
     "entries": [{"viewpoint": "vp000", "kind": "ori", "offset": 0}, ...]}

``offset`` is a byte offset into the blob; each record is ``dim`` little-endian
float32 values. ``blob`` is resolved relative to the manifest's directory. An
optional ``blob_sha256`` field (written by :func:`write_store`) lets ingest
detect a blob that was altered after the manifest was written.
"""

from __future__ import annotations

import enum
import hashlib
import json
from collections import Counter
from pathlib import Path
from typing import Iterator, Mapping

import numpy as np


class FeatureKind(str, enum.Enum):
    """Feature type; definition order is the canonical order used to break ties."""

    ORI = "ori"
    FG = "fg"
    BG = "bg"

    @property
    def rank(self) -> int:
        return _RANK[self]

    @classmethod
    def parse(cls, value: "str | FeatureKind") -> "FeatureKind":
        try:
            return cls(value)
        except ValueError:
            raise ValueError(f"unknown feature kind {value!r}; expected one of ori, fg, bg") from None

    def __str__(self) -> str:
        return self.value


KINDS: tuple[FeatureKind, ...] = tuple(FeatureKind)
_RANK = {k: i for i, k in enumerate(KINDS)}


class FeatureStoreError(ValueError):
    pass


class MissingKindError(FeatureStoreError):
    pass


class FeatureStore:
    """Immutable (viewpoint, kind) -> vector table of uniform dimension."""

    def __init__(self, dim: int, records: Mapping[tuple[str, FeatureKind], np.ndarray], scan_id: str | None = None):
        if dim <= 0:
            raise FeatureStoreError(f"dim must be positive, got {dim}")
        self.dim = dim
        self.scan_id = scan_id
        self._records: dict[tuple[str, FeatureKind], np.ndarray] = {}
        for (vp, kind), vec in records.items():
            kind = FeatureKind.parse(kind)
            arr = np.array(vec, dtype="<f4")
            if arr.shape != (dim,):
                raise FeatureStoreError(f"record ({vp!r}, {kind}) has shape {arr.shape}, expected ({dim},)")
            if not np.all(np.isfinite(arr)):
                raise FeatureStoreError(f"record ({vp!r}, {kind}) has non-finite values")
            arr.flags.writeable = False
            self._records[(vp, kind)] = arr
        per_vp = Counter(vp for vp, _ in self._records)
        for vp in sorted(per_vp):
            missing = [k.value for k in KINDS if (vp, k) not in self._records]
            if missing:
                raise MissingKindError(f"viewpoint {vp!r} is missing feature kind(s) {missing}")

    def __len__(self) -> int:
        return len(self._records)

    def __contains__(self, vp_id: object) -> bool:
        return (vp_id, FeatureKind.ORI) in self._records

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, FeatureStore):
            return NotImplemented
        return (
            self.dim == other.dim
            and self._records.keys() == other._records.keys()
            and all(np.array_equal(v, other._records[k]) for k, v in self._records.items())
        )

    def viewpoints(self) -> list[str]:
        return sorted({vp for vp, _ in self._records})

    def items(self) -> Iterator[tuple[tuple[str, FeatureKind], np.ndarray]]:
        for vp in self.viewpoints():
            for k in KINDS:
                yield (vp, k), self._records[(vp, k)]

    def get(self, vp_id: str, kind: FeatureKind | str) -> np.ndarray:
        kind = FeatureKind.parse(kind)
        try:
            return self._records[(vp_id, kind)]
        except KeyError:
            raise KeyError(f"no feature record for viewpoint {vp_id!r}, kind {kind}") from None


def write_store(store: FeatureStore, manifest_path: str | Path, blob_name: str | None = None) -> Path:
    manifest_path = Path(manifest_path)
    manifest_path.parent.mkdir(parents=True, exist_ok=True)
    blob_name = blob_name or manifest_path.with_suffix(".bin").name
    entries = []
    chunks = []
    offset = 0
    for (vp, kind), vec in store.items():
        entries.append({"viewpoint": vp, "kind": kind.value, "offset": offset})
        chunks.append(vec.astype("<f4").tobytes())
        offset += 4 * store.dim
    blob = b"".join(chunks)
    (manifest_path.parent / blob_name).write_bytes(blob)
    manifest: dict = {"dim": store.dim, "blob": blob_name, "blob_sha256": hashlib.sha256(blob).hexdigest(),
                      "entries": entries}
    if store.scan_id is not None:
        manifest["scan_id"] = store.scan_id
    manifest_path.write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    return manifest_path


def ingest(manifest_path: str | Path) -> FeatureStore:
    """Load and validate a manifest/blob pair.

    Raises:
        FeatureStoreError: On a malformed manifest, an out-of-bounds offset,
            a non-finite value, a duplicate entry, or a blob whose checksum
            disagrees with the manifest.
        MissingKindError: If a viewpoint lacks one of ori/fg/bg.
    """
    manifest_path = Path(manifest_path)
    try:
        manifest = json.loads(manifest_path.read_text())
        dim = int(manifest["dim"])
        entries = manifest["entries"]
        blob_path = manifest_path.parent / manifest.get("blob", manifest_path.with_suffix(".bin").name)
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise FeatureStoreError(f"malformed feature manifest {manifest_path}: {exc}") from None
    if dim <= 0:
        raise FeatureStoreError(f"manifest dim must be positive, got {dim}")
    if not blob_path.exists():
        raise FeatureStoreError(f"feature blob {blob_path} does not exist")
    blob = blob_path.read_bytes()
    expected = manifest.get("blob_sha256")
    if expected is not None and hashlib.sha256(blob).hexdigest() != expected:
        raise FeatureStoreError(f"feature blob {blob_path} does not match the manifest checksum")
    nbytes = 4 * dim
    records: dict[tuple[str, FeatureKind], np.ndarray] = {}
    for e in entries:
        vp, kind, offset = str(e["viewpoint"]), FeatureKind.parse(e["kind"]), int(e["offset"])
        if "dim" in e and int(e["dim"]) != dim:
            raise FeatureStoreError(f"entry ({vp!r}, {kind}) declares dim {e['dim']}, manifest dim is {dim}")
        if offset < 0 or offset + nbytes > len(blob):
            raise FeatureStoreError(
                f"entry ({vp!r}, {kind}) offset {offset} + {nbytes} bytes exceeds blob size {len(blob)}"
            )
        if (vp, kind) in records:
            raise FeatureStoreError(f"duplicate entry ({vp!r}, {kind})")
        vec = np.frombuffer(blob, dtype="<f4", count=dim, offset=offset)
        if not np.all(np.isfinite(vec)):
            raise FeatureStoreError(f"entry ({vp!r}, {kind}) contains non-finite values")
        records[(vp, kind)] = vec
    return FeatureStore(dim, records, scan_id=manifest.get("scan_id"))


def coverage_report(store: FeatureStore, viewpoint_ids: list[str] | None = None) -> dict:
    """Summarise which viewpoints of a scan have complete feature triples."""
    have = set(store.viewpoints())
    report = {"scan_id": store.scan_id, "dim": store.dim, "viewpoints": len(have), "records": len(store)}
    if viewpoint_ids is not None:
        missing = sorted(set(viewpoint_ids) - have)
        report["expected"] = len(viewpoint_ids)
        report["missing"] = missing
        report["coverage"] = (len(viewpoint_ids) - len(missing)) / len(viewpoint_ids) if viewpoint_ids else 1.0
    return report
