"""Foreground/background disentanglement of panoramic observations.

Masks are single-channel and broadcast across the RGB channels. The pooled
feature extractor is a deterministic stand-in for a visual encoder: each view
contributes its per-channel mean over the selected region, and the 36 x 3
means are block-averaged down to the requested dimension.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

N_VIEWS = 36
CHANNELS = 3
REGIONS = ("ori", "fg", "bg")

_SAFE_ID = re.compile(r"^[A-Za-z0-9_.\-]+$")


class DimensionMismatchError(ValueError):
    pass


@dataclass(frozen=True)
class ViewImage:
    """RGB view with pixel values in [0, 1], stored as an (height, width, 3) array."""

    width: int
    height: int
    pixels: np.ndarray

    def __post_init__(self) -> None:
        if self.width <= 0 or self.height <= 0:
            raise ValueError("image dimensions must be positive")
        px = np.asarray(self.pixels)
        if px.size != self.width * self.height * CHANNELS:
            raise DimensionMismatchError(
                f"pixel buffer has {px.size} values, expected {self.width}x{self.height}x{CHANNELS}"
            )
        px = px.reshape(self.height, self.width, CHANNELS)
        if not np.all((px >= 0) & (px <= 1)):
            raise ValueError("pixel values must lie in [0, 1]")
        object.__setattr__(self, "pixels", px)

    @classmethod
    def from_flat(cls, width: int, height: int, values: Sequence[float]) -> "ViewImage":
        return cls(width, height, np.asarray(values, dtype=np.float32))

    def flat(self) -> np.ndarray:
        return self.pixels.reshape(-1)


@dataclass(frozen=True)
class BinaryMask:
    width: int
    height: int
    bits: np.ndarray

    def __post_init__(self) -> None:
        b = np.asarray(self.bits)
        if b.size != self.width * self.height:
            raise DimensionMismatchError(f"mask has {b.size} values, expected {self.width}x{self.height}")
        if not np.all((b == 0) | (b == 1)):
            raise ValueError("mask values must be 0 or 1")
        object.__setattr__(self, "bits", b.reshape(self.height, self.width).astype(np.uint8))

    @classmethod
    def from_flat(cls, width: int, height: int, values: Sequence[int]) -> "BinaryMask":
        return cls(width, height, np.asarray(values))

    def flat(self) -> np.ndarray:
        return self.bits.reshape(-1)


@dataclass(frozen=True)
class Panorama:
    viewpoint_id: str
    views: tuple[ViewImage, ...]
    masks: tuple[BinaryMask, ...]

    def __post_init__(self) -> None:
        if len(self.views) != N_VIEWS or len(self.masks) != N_VIEWS:
            raise ValueError(
                f"panorama {self.viewpoint_id!r} needs {N_VIEWS} views and masks, "
                f"got {len(self.views)} and {len(self.masks)}"
            )
        for j, (v, m) in enumerate(zip(self.views, self.masks)):
            _check_dims(v, m, f"view {j} of {self.viewpoint_id!r}")


@dataclass(frozen=True)
class LandmarkSet:
    viewpoint_id: str
    room_type: str
    landmarks: tuple[str, ...]

    def __post_init__(self) -> None:
        if len(set(self.landmarks)) != len(self.landmarks):
            raise ValueError(f"duplicate landmarks for {self.viewpoint_id!r}")


def _check_dims(image: ViewImage, mask: BinaryMask, what: str = "image/mask") -> None:
    if (image.width, image.height) != (mask.width, mask.height):
        raise DimensionMismatchError(
            f"{what}: image is {image.width}x{image.height}, mask is {mask.width}x{mask.height}"
        )


# -- landmark filtering -----------------------------------------------------


def exact_similarity(a: str, b: str) -> float:
    return 1.0 if a == b else 0.0


def _bigrams(s: str) -> set[str]:
    return {s[i : i + 2] for i in range(len(s) - 1)}


def bigram_similarity(a: str, b: str) -> float:
    """Dice overlap of the character-bigram sets of two lowercased strings."""
    a, b = a.lower(), b.lower()
    ga, gb = _bigrams(a), _bigrams(b)
    if not ga or not gb:
        return 1.0 if a == b else 0.0
    return 2.0 * len(ga & gb) / (len(ga) + len(gb))


def filter_landmarks(
    detected: Iterable[str],
    landmarks: LandmarkSet | Sequence[str],
    similarity: Callable[[str, str], float] = bigram_similarity,
    threshold: float = 0.5,
) -> list[str]:
    """Keep detected tags whose best similarity to any landmark reaches ``threshold``.

    Input order is preserved. With no landmarks nothing survives.
    """
    if not 0.0 <= threshold <= 1.0:
        raise ValueError(f"threshold must be in [0, 1], got {threshold}")
    marks = landmarks.landmarks if isinstance(landmarks, LandmarkSet) else tuple(landmarks)
    kept = []
    for tag in detected:
        best = max((similarity(tag, m) for m in marks), default=0.0)
        if best >= threshold:
            kept.append(tag)
    return kept


# -- masking ------------------------------------------------------------------


def apply_mask(image: ViewImage, mask: BinaryMask) -> ViewImage:
    _check_dims(image, mask)
    out = image.pixels * mask.bits[:, :, None].astype(image.pixels.dtype)
    return ViewImage(image.width, image.height, out)


def complement_mask(mask: BinaryMask) -> BinaryMask:
    return BinaryMask(mask.width, mask.height, 1 - mask.bits)


def view_channel_means(image: ViewImage, mask: BinaryMask, region: str) -> np.ndarray:
    """Per-channel mean of ``image`` over the pixels selected by ``region``.

    An empty selection pools to zeros, the exact mean of an all-black masked view.
    """
    _check_dims(image, mask)
    if region == "ori":
        sel = np.ones((image.height, image.width), dtype=bool)
    elif region == "fg":
        sel = mask.bits == 1
    elif region == "bg":
        sel = mask.bits == 0
    else:
        raise ValueError(f"unknown region {region!r}; expected one of {REGIONS}")
    n = int(sel.sum())
    if n == 0:
        return np.zeros(CHANNELS)
    return image.pixels[sel].astype(np.float64).sum(axis=0) / n


def fold(vec: np.ndarray, dim: int) -> np.ndarray:
    """Block-average ``vec`` into ``dim`` contiguous, near-equal blocks."""
    vec = np.asarray(vec, dtype=np.float64)
    if not 0 < dim <= vec.size:
        raise ValueError(f"feature dim must be in [1, {vec.size}], got {dim}")
    return np.array([b.mean() for b in np.array_split(vec, dim)])


def extract_features(pano: Panorama, region: str, dim: int) -> np.ndarray:
    means = np.concatenate([view_channel_means(v, m, region) for v, m in zip(pano.views, pano.masks)])
    return fold(means, dim)


# -- panorama files ----------------------------------------------------------
#
# <dir>/<viewpoint>.json   sidecar {"viewpoint_id", "width", "height"}
# <dir>/<viewpoint>.f32    36*height*width*3 little-endian float32 pixels
# <dir>/<viewpoint>.u8     36*height*width uint8 mask bits


def write_panorama(pano: Panorama, directory: str | Path) -> Path:
    if not _SAFE_ID.match(pano.viewpoint_id):
        raise ValueError(f"viewpoint id {pano.viewpoint_id!r} is not filename-safe")
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    w, h = pano.views[0].width, pano.views[0].height
    if any((v.width, v.height) != (w, h) for v in pano.views):
        raise DimensionMismatchError("all views of a stored panorama must share dimensions")
    pix = np.stack([v.pixels for v in pano.views]).astype("<f4")
    bits = np.stack([m.bits for m in pano.masks]).astype(np.uint8)
    (d / f"{pano.viewpoint_id}.f32").write_bytes(pix.tobytes())
    (d / f"{pano.viewpoint_id}.u8").write_bytes(bits.tobytes())
    sidecar = d / f"{pano.viewpoint_id}.json"
    sidecar.write_text(json.dumps({"viewpoint_id": pano.viewpoint_id, "width": w, "height": h}, sort_keys=True) + "\n")
    return sidecar


def read_panorama(sidecar: str | Path) -> Panorama:
    sidecar = Path(sidecar)
    meta = json.loads(sidecar.read_text())
    vid, w, h = meta["viewpoint_id"], int(meta["width"]), int(meta["height"])
    stem = sidecar.with_suffix("")
    pix = np.frombuffer(stem.with_suffix(".f32").read_bytes(), dtype="<f4")
    bits = np.frombuffer(stem.with_suffix(".u8").read_bytes(), dtype=np.uint8)
    if pix.size != N_VIEWS * h * w * CHANNELS or bits.size != N_VIEWS * h * w:
        raise DimensionMismatchError(f"panorama {vid!r}: blob sizes do not match {w}x{h}x{N_VIEWS}")
    pix = pix.reshape(N_VIEWS, h, w, CHANNELS)
    bits = bits.reshape(N_VIEWS, h, w)
    return Panorama(
        vid,
        tuple(ViewImage(w, h, pix[j]) for j in range(N_VIEWS)),
        tuple(BinaryMask(w, h, bits[j]) for j in range(N_VIEWS)),
    )


def iter_panoramas(directory: str | Path) -> Iterable[Panorama]:
    for sidecar in sorted(Path(directory).glob("*.json")):
        yield read_panorama(sidecar)
