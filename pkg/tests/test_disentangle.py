from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra import numpy as hnp

from cofa.disentangle import (
    CHANNELS,
    N_VIEWS,
    BinaryMask,
    DimensionMismatchError,
    LandmarkSet,
    Panorama,
    ViewImage,
    apply_mask,
    bigram_similarity,
    complement_mask,
    exact_similarity,
    extract_features,
    filter_landmarks,
    fold,
    iter_panoramas,
    read_panorama,
    view_channel_means,
    write_panorama,
)


@st.composite
def image_mask_pairs(draw, max_side=6):
    w = draw(st.integers(1, max_side))
    h = draw(st.integers(1, max_side))
    px = draw(hnp.arrays(np.float32, (h, w, CHANNELS), elements=st.floats(0, 1, width=32)))
    bits = draw(hnp.arrays(np.uint8, (h, w), elements=st.integers(0, 1)))
    return ViewImage(w, h, px), BinaryMask(w, h, bits)


def uniform_panorama(value=0.5, bit=1, w=2, h=2, vp="vp"):
    views = tuple(ViewImage(w, h, np.full((h, w, 3), value, np.float32)) for _ in range(N_VIEWS))
    masks = tuple(BinaryMask(w, h, np.full((h, w), bit, np.uint8)) for _ in range(N_VIEWS))
    return Panorama(vp, views, masks)


# -- landmark filtering -----------------------------------------------------------


def test_exact_match_filtering():
    assert filter_landmarks(["mug", "wall"], ["mug", "sink"], exact_similarity, 1.0) == ["mug"]


def test_empty_detections():
    assert filter_landmarks([], ["mug"], bigram_similarity, 0.5) == []


def test_bigram_reference_values():
    # cup {cu, up} vs mug {mu, ug}: no shared bigram.
    assert bigram_similarity("cup", "mug") == 0.0
    # rug {ru, ug} vs mug {mu, ug}: Dice = 2 * 1 / (2 + 2).
    assert bigram_similarity("rug", "mug") == 0.5
    assert bigram_similarity("sink", "sink") == 1.0
    assert bigram_similarity("a", "a") == 1.0 and bigram_similarity("a", "b") == 0.0


def test_bigram_filtering_threshold():
    kept = filter_landmarks(["cup", "rug"], LandmarkSet("v", "kitchen", ("mug",)), bigram_similarity, 0.34)
    assert kept == ["rug"]


@pytest.mark.parametrize("t", [-0.1, 1.5])
def test_threshold_out_of_range(t):
    with pytest.raises(ValueError):
        filter_landmarks(["mug"], ["mug"], exact_similarity, t)


def test_landmark_set_rejects_duplicates():
    with pytest.raises(ValueError):
        LandmarkSet("v", "kitchen", ("mug", "mug"))


words = st.text(alphabet="abcdefg", min_size=0, max_size=6)


@given(st.lists(words, max_size=8), st.lists(words, max_size=5), st.floats(0, 1), st.floats(0, 1))
def test_filter_subset_and_monotone(detected, marks, t1, t2):
    lo, hi = sorted((t1, t2))
    kept_lo = filter_landmarks(detected, marks, bigram_similarity, lo)
    kept_hi = filter_landmarks(detected, marks, bigram_similarity, hi)
    assert all(k in detected for k in kept_lo)
    assert kept_lo == [d for d in detected if d in kept_lo]
    assert set(kept_hi) <= set(kept_lo)


@given(words, words)
def test_bigram_symmetric_and_bounded(a, b):
    s = bigram_similarity(a, b)
    assert s == bigram_similarity(b, a)
    assert 0.0 <= s <= 1.0


# -- masking ----------------------------------------------------------------------


def test_identity_and_zero_masks(rng):
    img = ViewImage(3, 2, rng.random((2, 3, 3)).astype(np.float32))
    ones = BinaryMask(3, 2, np.ones((2, 3), np.uint8))
    assert np.array_equal(apply_mask(img, ones).pixels, img.pixels)
    assert not apply_mask(img, complement_mask(ones)).pixels.any()


def test_mask_broadcasts_over_channels():
    img = ViewImage.from_flat(2, 1, [0.5, 0.5, 0.5, 1, 1, 1])
    out = apply_mask(img, BinaryMask.from_flat(2, 1, [1, 0]))
    assert out.flat().tolist() == [0.5, 0.5, 0.5, 0, 0, 0]


def test_complement_values():
    m = BinaryMask.from_flat(3, 1, [1, 0, 1])
    assert complement_mask(m).flat().tolist() == [0, 1, 0]
    assert not complement_mask(BinaryMask.from_flat(2, 2, [1] * 4)).flat().any()


def test_dimension_mismatch():
    img = ViewImage.from_flat(2, 1, [0] * 6)
    with pytest.raises(DimensionMismatchError):
        apply_mask(img, BinaryMask.from_flat(1, 2, [0, 1]))


@pytest.mark.parametrize("bad", [[0, 2], [-1, 0]])
def test_mask_rejects_non_binary(bad):
    with pytest.raises(ValueError):
        BinaryMask.from_flat(2, 1, bad)


def test_image_rejects_out_of_range():
    with pytest.raises(ValueError):
        ViewImage.from_flat(1, 1, [0.2, 1.5, 0.0])


@given(image_mask_pairs())
def test_complementarity_exact(pair):
    img, m = pair
    total = apply_mask(img, m).pixels + apply_mask(img, complement_mask(m)).pixels
    assert np.array_equal(total, img.pixels)


@given(image_mask_pairs())
def test_mask_idempotent_and_involution(pair):
    img, m = pair
    once = apply_mask(img, m)
    assert np.array_equal(apply_mask(once, m).pixels, once.pixels)
    assert np.array_equal(complement_mask(complement_mask(m)).bits, m.bits)


@given(image_mask_pairs())
def test_masked_mean_decomposition(pair):
    img, m = pair
    n_fg = int(m.bits.sum())
    n_bg = m.bits.size - n_fg
    lhs = n_fg * view_channel_means(img, m, "fg") + n_bg * view_channel_means(img, m, "bg")
    rhs = m.bits.size * view_channel_means(img, m, "ori")
    np.testing.assert_allclose(lhs, rhs, rtol=0, atol=1e-6)


# -- feature extraction -------------------------------------------------------------


def test_hand_computed_view_means():
    img = ViewImage.from_flat(2, 1, [1, 1, 1, 0, 0, 0])
    m = BinaryMask.from_flat(2, 1, [1, 0])
    assert view_channel_means(img, m, "fg").tolist() == [1, 1, 1]
    assert view_channel_means(img, m, "bg").tolist() == [0, 0, 0]
    assert view_channel_means(img, m, "ori").tolist() == [0.5, 0.5, 0.5]


def test_constant_image_ori_features():
    feats = extract_features(uniform_panorama(0.5), "ori", 8)
    assert feats.shape == (8,) and np.all(feats == 0.5)


def test_empty_foreground_pools_to_zero():
    assert not extract_features(uniform_panorama(0.7, bit=0), "fg", 5).any()


def test_fold_block_average():
    assert fold(np.arange(6.0), 3).tolist() == [0.5, 2.5, 4.5]
    # Uneven split: blocks of sizes 3 and 2.
    assert fold(np.arange(5.0), 2).tolist() == [1.0, 3.5]
    with pytest.raises(ValueError):
        fold(np.arange(4.0), 5)


def test_extraction_is_deterministic(rng):
    pano = Panorama(
        "v",
        tuple(ViewImage(3, 3, rng.random((3, 3, 3)).astype(np.float32)) for _ in range(N_VIEWS)),
        tuple(BinaryMask(3, 3, rng.integers(0, 2, (3, 3))) for _ in range(N_VIEWS)),
    )
    for region in ("ori", "fg", "bg"):
        assert np.array_equal(extract_features(pano, region, 12), extract_features(pano, region, 12))


def test_panorama_needs_36_views():
    p = uniform_panorama()
    with pytest.raises(ValueError, match="36"):
        Panorama("v", p.views[:-1], p.masks)


def test_panorama_file_round_trip(tmp_path, rng):
    pano = Panorama(
        "vp1",
        tuple(ViewImage(3, 2, rng.random((2, 3, 3)).astype(np.float32)) for _ in range(N_VIEWS)),
        tuple(BinaryMask(3, 2, rng.integers(0, 2, (2, 3))) for _ in range(N_VIEWS)),
    )
    sidecar = write_panorama(pano, tmp_path)
    back = read_panorama(sidecar)
    assert back.viewpoint_id == "vp1"
    for a, b in zip(pano.views + pano.masks, back.views + back.masks):
        assert np.array_equal(getattr(a, "pixels", getattr(a, "bits", None)), getattr(b, "pixels", getattr(b, "bits", None)))
    assert [p.viewpoint_id for p in iter_panoramas(tmp_path)] == ["vp1"]


def test_truncated_panorama_blob(tmp_path):
    sidecar = write_panorama(uniform_panorama(vp="vpx"), tmp_path)
    blob = tmp_path / "vpx.f32"
    blob.write_bytes(blob.read_bytes()[:-4])
    with pytest.raises(DimensionMismatchError):
        read_panorama(sidecar)
