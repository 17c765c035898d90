"""Procedural toy corpus: small scenes with known object layouts.

Each scene is a smooth two-tone gradient background with one to three flat
colored shapes. Because every shape's color, geometry, and position are
known, the generator also emits:

  - a ground-truth description (items named "<color> <shape>" plus an
    overall line),
  - per-item ground-truth binary masks,
  - describer fixtures keyed by image content hash, and
  - embedding text overrides mapping item texts to the embedding of a flat
    patch of the item color, which gives the text-vs-patch cosine scores a
    real signal on this corpus.

The canonical corpus is 20 images at 64x64 with seed 7.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import raster
from .embedding import FixtureEmbedder, ToyEmbedder, save_text_overrides
from .errors import FixtureMissing
from .semantics import SemanticDescription, make_description, write_fixtures

CORPUS_SIZE = 20
CORPUS_SEED = 7
SCENE_HW = 64

PALETTE = {
    "red": (0.85, 0.15, 0.15),
    "blue": (0.15, 0.20, 0.85),
    "green": (0.15, 0.75, 0.25),
    "yellow": (0.90, 0.85, 0.20),
    "purple": (0.60, 0.20, 0.70),
    "orange": (0.95, 0.55, 0.10),
}
SHAPES = ("square", "disk", "bar")
_BACKGROUNDS = {
    "gray": (0.50, 0.50, 0.50),
    "beige": (0.62, 0.58, 0.50),
    "slate": (0.42, 0.47, 0.55),
}
_POSITION_WORDS = (
    ("upper left", "top", "upper right"),
    ("left", "center", "right"),
    ("lower left", "bottom", "lower right"),
)


@dataclass(frozen=True)
class CorpusItem:
    image_id: str
    image: np.ndarray
    description: SemanticDescription
    gt_masks: tuple[np.ndarray, ...]  # one boolean (H,W) mask per item


def _render_shape(shape: str, cy: int, cx: int, half: int, hw: int) -> np.ndarray:
    yy, xx = np.mgrid[0:hw, 0:hw]
    if shape == "square":
        return (np.abs(yy - cy) <= half) & (np.abs(xx - cx) <= half)
    if shape == "disk":
        return (yy - cy) ** 2 + (xx - cx) ** 2 <= half**2
    return (np.abs(yy - cy) <= max(2, half // 2)) & (np.abs(xx - cx) <= half)  # bar


def _position_word(cy: int, cx: int, hw: int) -> str:
    return _POSITION_WORDS[min(2, 3 * cy // hw)][min(2, 3 * cx // hw)]


def make_scene(rng: np.random.Generator, hw: int = SCENE_HW):
    """One scene: (image, description, gt_masks)."""
    bg_name = list(_BACKGROUNDS)[rng.integers(len(_BACKGROUNDS))]
    base = np.array(_BACKGROUNDS[bg_name])
    shift = 0.12 if rng.random() < 0.5 else -0.12
    ramp = np.linspace(-shift, shift, hw)
    img = np.clip(base[None, None, :] + ramp[:, None, None], 0.0, 1.0)
    img = np.repeat(img, hw, axis=1) if img.shape[1] == 1 else img
    if rng.random() < 0.5:
        img = img.transpose(1, 0, 2).copy()  # horizontal gradient half the time

    n_shapes = int(rng.integers(1, 4))
    combos = [(c, s) for c in PALETTE for s in SHAPES]
    picks = rng.permutation(len(combos))[: 2 * n_shapes]  # spares for failed placements
    occupied: list[tuple[int, int, int]] = []
    items = []
    masks = []
    for k in picks:
        if len(items) == n_shapes:
            break
        color_name, shape = combos[k]
        half = int(rng.integers(5, 12))
        placed = False
        for _ in range(40):
            cy = int(rng.integers(half + 2, hw - half - 2))
            cx = int(rng.integers(half + 2, hw - half - 2))
            if all((cy - oy) ** 2 + (cx - ox) ** 2 > (half + oh + 3) ** 2 for oy, ox, oh in occupied):
                placed = True
                break
        if not placed:
            continue
        occupied.append((cy, cx, half))
        mask = _render_shape(shape, cy, cx, half, hw)
        img[mask] = PALETTE[color_name]
        masks.append(mask)
        items.append(
            (
                f"{color_name} {shape}",
                f"a flat {color_name} {shape} in the {_position_word(cy, cx, hw)} of the frame",
            )
        )
    overall = f"a synthetic test scene with {len(items)} flat shapes on a {bg_name} gradient"
    return img, make_description(items, overall), tuple(masks)


def build_corpus(
    n: int = CORPUS_SIZE, seed: int = CORPUS_SEED, hw: int = SCENE_HW
) -> list[CorpusItem]:
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n):
        img, desc, masks = make_scene(rng, hw)
        out.append(CorpusItem(image_id=f"toy{i:03d}", image=img, description=desc, gt_masks=masks))
    return out


def corpus_text_overrides(corpus: list[CorpusItem]) -> dict[str, np.ndarray]:
    """Item-text embeddings anchored to flat color patches, for every item
    name and name+detail string appearing in the corpus."""
    toy = ToyEmbedder()
    patches = {
        name: toy.embed_image(np.full((16, 16, 3), PALETTE[name])) for name in PALETTE
    }
    overrides: dict[str, np.ndarray] = {}
    for entry in corpus:
        for item in entry.description.items:
            color_name = item.name.split()[0]
            overrides[item.name] = patches[color_name]
            overrides[f"{item.name} {item.detail}"] = patches[color_name]
    return overrides


def corpus_embedder(corpus: list[CorpusItem]) -> FixtureEmbedder:
    return FixtureEmbedder(ToyEmbedder(), text_overrides=corpus_text_overrides(corpus))


class CorpusDescriber:
    """In-memory describer keyed by image content hash."""

    def __init__(self, corpus: list[CorpusItem]):
        self._by_hash = {raster.content_hash(e.image): e.description for e in corpus}

    def describe(self, img: np.ndarray) -> SemanticDescription:
        key = raster.content_hash(img)
        if key not in self._by_hash:
            raise FixtureMissing(f"no canned description for image hash {key[:16]}")
        return self._by_hash[key]


def write_corpus_files(corpus: list[CorpusItem], out_dir) -> dict[str, Path]:
    """Materialize the corpus for CLI runs: PNG images, describer fixtures,
    and embedding text overrides."""
    out_dir = Path(out_dir)
    img_dir = out_dir / "images"
    img_dir.mkdir(parents=True, exist_ok=True)
    for entry in corpus:
        raster.save_image(entry.image, img_dir / f"{entry.image_id}.png")
    fixtures = out_dir / "describer_fixtures.tsv"
    write_fixtures(
        fixtures,
        {raster.content_hash(e.image): e.description for e in corpus},
    )
    overrides = out_dir / "text_overrides.tsv"
    save_text_overrides(overrides, corpus_text_overrides(corpus))
    return {"images": img_dir, "describer_fixtures": fixtures, "text_overrides": overrides}
