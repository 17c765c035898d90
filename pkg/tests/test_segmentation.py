"""Decoder-side similarity masks and the encoder-side grid-map fallback."""

from __future__ import annotations

import numpy as np
import pytest

from sgic.embedding import FixtureEmbedder, ToyEmbedder
from sgic.errors import ImageTooSmall, MalformedPayload, ShapeMismatch
from sgic.segmentation import (
    ASSIGN_TAU,
    GRID_SIZE,
    grid_assign,
    grid_bits,
    grid_decode,
    grid_encode,
    grid_to_mask,
    masks_for_description,
    similarity_mask,
)
from sgic.semantics import SemanticItem, make_description

RED = (0.85, 0.15, 0.15)
BLUE = (0.15, 0.20, 0.85)


def _two_region_image():
    img = np.zeros((32, 32, 3))
    img[:, :16] = RED
    img[:, 16:] = BLUE
    return img


def _cell_vec(color):
    return ToyEmbedder().embed_image(np.full((4, 4, 3), color))


def test_similarity_mask_two_region_fixture():
    img = _two_region_image()
    emb = FixtureEmbedder(text_overrides={"red region left area": _cell_vec(RED)})
    mask = similarity_mask(img, SemanticItem("red region", "left area"), emb, (64, 64))
    assert mask.shape == (64, 64)
    assert mask.min() >= 0.0 and mask.max() <= 1.0
    assert mask[:, :32].mean() > mask[:, 32:].mean()
    thr = mask >= 0.5
    gt = np.zeros((64, 64), dtype=bool)
    gt[:, :32] = True
    iou = (thr & gt).sum() / (thr | gt).sum()
    assert iou >= 0.7


def test_similarity_mask_constant_image_degenerates_to_half():
    img = np.full((32, 32, 3), 0.5)
    mask = similarity_mask(img, SemanticItem("thing", "anything"), ToyEmbedder(), (64, 64))
    assert np.all(mask == 0.5)


def test_similarity_mask_bounds_and_determinism():
    rng = np.random.default_rng(17)
    emb = ToyEmbedder()
    item = SemanticItem("speckle", "random texture")
    for _ in range(5):
        img = rng.random((rng.integers(16, 40), rng.integers(16, 40), 3))
        out_hw = (img.shape[0] * 2, img.shape[1] * 2)
        a = similarity_mask(img, item, emb, out_hw)
        b = similarity_mask(img, item, emb, out_hw)
        assert a.shape == out_hw
        assert a.min() >= 0.0 and a.max() <= 1.0
        assert np.array_equal(a, b)


def test_similarity_mask_small_image_rejected():
    with pytest.raises(ImageTooSmall):
        similarity_mask(np.zeros((15, 32, 3)), SemanticItem("x", "y"), ToyEmbedder(), (30, 64))


def test_masks_for_description_one_per_item():
    img = _two_region_image()
    d = make_description(
        [("red region", "left area"), ("blue region", "right area")], "two color fields"
    )
    masks = masks_for_description(img, d, ToyEmbedder(), (64, 64))
    assert len(masks) == 2
    assert all(m.shape == (64, 64) for m in masks)


def test_grid_assign_two_region_split():
    img = _two_region_image()
    d = make_description(
        [("red region", "left area"), ("blue region", "right area")], "two color fields"
    )
    emb = FixtureEmbedder(
        text_overrides={"red region": _cell_vec(RED), "blue region": _cell_vec(BLUE)}
    )
    g = grid_assign(img, d, emb)
    assert g.shape == (GRID_SIZE, GRID_SIZE)
    assert np.all(g[:, :4] == 1)
    assert np.all(g[:, 4:] == 2)


def test_grid_assign_single_item_all_matched():
    img = np.full((32, 32, 3), RED)
    d = make_description([("red field", "everywhere")], "a red field")
    emb = FixtureEmbedder(text_overrides={"red field": _cell_vec(RED)})
    assert np.all(grid_assign(img, d, emb) == 1)


def test_grid_assign_below_tau_is_background():
    img = np.full((32, 32, 3), RED)
    # constant cells have empty edge-orientation bins, so a pure edge-bin
    # vector scores cosine 0 < tau against every cell
    ortho = np.zeros(64)
    ortho[50] = 1.0
    d = make_description([("ghost", "not present")], "nothing visible")
    emb = FixtureEmbedder(text_overrides={"ghost": ortho})
    assert ASSIGN_TAU > 0.0
    assert np.all(grid_assign(img, d, emb) == 0)


def test_grid_assign_tie_goes_to_lower_index():
    img = np.full((32, 32, 3), RED)
    v = _cell_vec(RED)
    d = make_description([("first", "a"), ("second", "b")], "twins")
    emb = FixtureEmbedder(text_overrides={"first": v, "second": v})
    assert np.all(grid_assign(img, d, emb) == 1)


def test_grid_assign_small_image_rejected():
    d = make_description([("x", "y")], "tiny")
    with pytest.raises(ImageTooSmall):
        grid_assign(np.zeros((7, 16, 3)), d, ToyEmbedder())


def test_grid_bits_formula():
    assert grid_bits(1) == 64
    assert grid_bits(3) == 128
    assert grid_bits(4) == 192
    assert grid_bits(8) == 256
    for j in range(1, 9):
        assert grid_bits(j) == 64 * max(1, int(np.ceil(np.log2(j + 1))))


def test_grid_encode_decode_round_trip():
    rng = np.random.default_rng(8)
    for _ in range(30):
        j = int(rng.integers(1, 9))
        g = rng.integers(0, j + 1, size=(GRID_SIZE, GRID_SIZE)).astype(np.uint8)
        data = grid_encode(g, j)
        assert len(data) * 8 == grid_bits(j)
        assert np.array_equal(grid_decode(data, j), g)


def test_grid_encode_rejects_bad_input():
    with pytest.raises(ShapeMismatch):
        grid_encode(np.zeros((4, 4), dtype=np.uint8), 1)
    g = np.zeros((GRID_SIZE, GRID_SIZE), dtype=np.int64)
    g[0, 0] = 3
    with pytest.raises(MalformedPayload):
        grid_encode(g, 2)


def test_grid_decode_rejects_bad_payloads():
    with pytest.raises(MalformedPayload):
        grid_decode(b"\x00" * 7, 1)  # one byte short of the 64-bit map
    # J=2 uses 2 bits/cell; leading bits 11 decode to cell value 3 > J
    bad = bytes([0xC0]) + b"\x00" * 15
    with pytest.raises(MalformedPayload):
        grid_decode(bad, 2)


def test_grid_to_mask_full_empty_and_single_cell():
    g = np.full((GRID_SIZE, GRID_SIZE), 1, dtype=np.uint8)
    assert np.all(grid_to_mask(g, 1, (64, 64)) == 1.0)
    assert np.all(grid_to_mask(g, 2, (64, 64)) == 0.0)

    g = np.zeros((GRID_SIZE, GRID_SIZE), dtype=np.uint8)
    g[2, 5] = 1
    mask = grid_to_mask(g, 1, (64, 64))
    assert mask.sum() == 64.0
    assert np.all(mask[16:24, 40:48] == 1.0)
    mask[16:24, 40:48] = 0.0
    assert np.all(mask == 0.0)


def test_grid_to_mask_rejects_bad_shape():
    with pytest.raises(ShapeMismatch):
        grid_to_mask(np.zeros((3, 3)), 1, (64, 64))
