from __future__ import annotations

import numpy as np
import pytest

from sgic import raster
from sgic.embedding import (
    TOY_DIM,
    FixtureEmbedder,
    ToyEmbedder,
    cosine,
    load_text_overrides,
    save_text_overrides,
)
from sgic.errors import DimensionMismatch, EmptyInput, ZeroNorm


@pytest.fixture(scope="module")
def toy():
    return ToyEmbedder()


def test_text_embedding_deterministic(toy):
    assert np.array_equal(toy.embed_text("sky"), toy.embed_text("sky"))


def test_text_embedding_unit_norm(toy):
    for t in ("sky", "a very long description of a scene", "x"):
        assert abs(np.linalg.norm(toy.embed_text(t)) - 1.0) < 1e-6
        assert toy.embed_text(t).shape == (TOY_DIM,)


def test_distinct_texts_differ(toy):
    assert not np.array_equal(toy.embed_text("sky"), toy.embed_text("dog"))


def test_text_rejects_empty(toy):
    with pytest.raises(EmptyInput):
        toy.embed_text("")
    with pytest.raises(EmptyInput):
        toy.embed_text("   ")


def test_image_embedding_basic_properties(toy):
    red = np.zeros((16, 16, 3))
    red[:, :] = (1.0, 0.0, 0.0)
    blue = np.zeros((16, 16, 3))
    blue[:, :] = (0.0, 0.0, 1.0)
    vr, vb = toy.embed_image(red), toy.embed_image(blue)
    assert abs(np.linalg.norm(vr) - 1.0) < 1e-6
    assert cosine(vr, vb) < 0.9
    assert abs(cosine(vr, toy.embed_image(red.copy())) - 1.0) < 1e-6


def test_image_embedding_rotation_invariant_on_constant(toy):
    img = np.full((12, 12, 3), 0.3)
    rot = np.rot90(img, 1, axes=(0, 1)).copy()
    assert np.allclose(toy.embed_image(img), toy.embed_image(rot))


def test_image_rejects_empty(toy):
    with pytest.raises((EmptyInput, Exception)):
        toy.embed_image(np.zeros((0, 4, 3)))


def test_cosine_identities():
    v = np.array([0.3, -0.2, 0.9, 0.1])
    assert abs(cosine(v, v) - 1.0) < 1e-12
    assert abs(cosine(v, -v) + 1.0) < 1e-12
    assert cosine(np.array([1.0, 0.0]), np.array([0.0, 1.0])) == 0.0


def test_cosine_symmetry_scale_and_bound():
    rng = np.random.default_rng(41)
    for _ in range(100):
        a = rng.standard_normal(16)
        b = rng.standard_normal(16)
        c = cosine(a, b)
        assert abs(c - cosine(b, a)) < 1e-12
        assert abs(c - cosine(2.0 * a, b)) < 1e-9
        assert abs(c) <= 1.0 + 1e-9


def test_cosine_rejects_mismatch_and_zero():
    with pytest.raises(DimensionMismatch):
        cosine(np.zeros(3) + 1, np.zeros(4) + 1)
    with pytest.raises(ZeroNorm):
        cosine(np.zeros(3), np.ones(3))


def test_fixture_embedder_text_override(toy):
    target = np.zeros(TOY_DIM)
    target[0] = 1.0
    fe = FixtureEmbedder(toy, text_overrides={"red square": target})
    assert np.array_equal(fe.embed_text("red square"), target)
    # non-overridden text falls through to the base embedder
    assert np.array_equal(fe.embed_text("sky"), toy.embed_text("sky"))


def test_fixture_embedder_image_override(toy):
    rng = np.random.default_rng(42)
    img = rng.random((8, 8, 3))
    target = np.zeros(TOY_DIM)
    target[1] = 1.0
    fe = FixtureEmbedder(toy, image_overrides={raster.content_hash(img): target})
    assert np.array_equal(fe.embed_image(img), target)
    other = rng.random((8, 8, 3))
    assert np.array_equal(fe.embed_image(other), toy.embed_image(other))


def test_text_override_table_round_trip(tmp_path):
    rng = np.random.default_rng(43)
    table = {
        "red square": rng.standard_normal(8),
        "blue disk with spaces": rng.standard_normal(8),
    }
    path = tmp_path / "overrides.tsv"
    save_text_overrides(path, table)
    back = load_text_overrides(path)
    assert set(back) == set(table)
    for key in table:
        assert np.allclose(back[key], table[key])
