"""Joint text/image embedding providers.

The toy provider maps both modalities into a shared 64-dimensional space:
text by character-trigram hashing, images by a 48-bin RGB histogram plus a
16-bin edge-orientation histogram. It makes the alignment math mechanically
testable but claims no semantic text-image correspondence; tests that need
meaningful cross-modal similarity inject fixture pairs via FixtureEmbedder,
and real alignment comes from the gateway provider.
"""

from __future__ import annotations

import zlib
from pathlib import Path

import numpy as np

from . import raster
from .errors import DimensionMismatch, EmptyInput, ZeroNorm

TOY_DIM = 64
_COLOR_BINS = 16  # per channel, 48 total
_EDGE_BINS = 16


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise DimensionMismatch(f"embedding shapes {a.shape} vs {b.shape}")
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise ZeroNorm("cosine of zero-norm embedding")
    return float(np.dot(a, b) / (na * nb))


def _normalize(v: np.ndarray) -> np.ndarray:
    n = np.linalg.norm(v)
    if n == 0.0:
        raise ZeroNorm("embedding collapsed to zero vector")
    return v / n


class ToyEmbedder:
    """Deterministic hashing/histogram embedder, d = 64."""

    dim = TOY_DIM
    name = "toy"

    def embed_text(self, text: str) -> np.ndarray:
        if not text.strip():
            raise EmptyInput("embed_text: empty text")
        padded = "#" + text + "#"
        v = np.zeros(TOY_DIM)
        for i in range(len(padded) - 2):
            tri = padded[i : i + 3]
            v[zlib.crc32(tri.encode("utf-8")) % TOY_DIM] += 1.0
        return _normalize(v)

    def embed_image(self, img: np.ndarray) -> np.ndarray:
        img = np.asarray(img, dtype=np.float64)
        if img.size == 0:
            raise EmptyInput("embed_image: empty raster")
        img = raster.require_rgb01(img, "embed_image input")
        v = np.zeros(TOY_DIM)
        for ch in range(3):
            bins = np.minimum((img[:, :, ch] * _COLOR_BINS).astype(np.int64), _COLOR_BINS - 1)
            v[ch * _COLOR_BINS : (ch + 1) * _COLOR_BINS] = np.bincount(
                bins.reshape(-1), minlength=_COLOR_BINS
            )
        v[: 3 * _COLOR_BINS] /= img.shape[0] * img.shape[1]
        v[3 * _COLOR_BINS :] = _edge_orientation_hist(img)
        return _normalize(v)


def _edge_orientation_hist(img: np.ndarray) -> np.ndarray:
    gray = 0.299 * img[:, :, 0] + 0.587 * img[:, :, 1] + 0.114 * img[:, :, 2]
    hist = np.zeros(_EDGE_BINS)
    if gray.shape[0] < 3 or gray.shape[1] < 3:
        return hist
    gx = gray[1:-1, 2:] - gray[1:-1, :-2]
    gy = gray[2:, 1:-1] - gray[:-2, 1:-1]
    mag = np.hypot(gx, gy)
    if mag.max() == 0.0:
        return hist
    ang = np.arctan2(gy, gx)  # (-pi, pi]
    bins = np.minimum(((ang + np.pi) / (2 * np.pi) * _EDGE_BINS).astype(np.int64), _EDGE_BINS - 1)
    np.add.at(hist, bins.reshape(-1), mag.reshape(-1))
    total = hist.sum()
    if total > 0:
        hist /= total
    return hist


class FixtureEmbedder:
    """Wraps a base embedder with injected text/image override vectors.

    Overrides let tests and the toy corpus pin known cross-modal pairs
    (e.g. item name -> that object's color histogram embedding). Image
    overrides are keyed by 8-bit content hash.
    """

    name = "fixture"

    def __init__(self, base=None, text_overrides=None, image_overrides=None):
        self.base = base if base is not None else ToyEmbedder()
        self.dim = self.base.dim
        self.text_overrides = dict(text_overrides or {})
        self.image_overrides = dict(image_overrides or {})

    def embed_text(self, text: str) -> np.ndarray:
        hit = self.text_overrides.get(text)
        if hit is not None:
            return _normalize(np.asarray(hit, dtype=np.float64).copy())
        return self.base.embed_text(text)

    def embed_image(self, img: np.ndarray) -> np.ndarray:
        if self.image_overrides:
            hit = self.image_overrides.get(raster.content_hash(img))
            if hit is not None:
                return _normalize(np.asarray(hit, dtype=np.float64).copy())
        return self.base.embed_image(img)


def load_text_overrides(path: str | Path) -> dict[str, np.ndarray]:
    """Embedding fixture file: one `text TAB csv-floats` record per line."""
    table: dict[str, np.ndarray] = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        text, _, csv = line.partition("\t")
        table[text] = np.array([float(x) for x in csv.split(",")])
    return table


def save_text_overrides(path: str | Path, table: dict[str, np.ndarray]) -> None:
    lines = []
    for text, vec in table.items():
        csv = ",".join(f"{x:.9g}" for x in np.asarray(vec, dtype=np.float64))
        lines.append(f"{text}\t{csv}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
