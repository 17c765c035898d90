"""Deterministic fixture models for stub mode.

Each stub is a pure function of its request: hashing gives embeddings,
color distance gives masks, palette statistics give captions. None of them
claim semantic quality; they exist so the route contracts (shapes, norms,
budgets, determinism) can be exercised end to end without model weights.
"""

from __future__ import annotations

import hashlib

import numpy as np

STUB_DIM = 32

_PALETTE = (
    ("red", (0.8, 0.2, 0.2)),
    ("orange", (0.9, 0.6, 0.2)),
    ("yellow", (0.9, 0.9, 0.3)),
    ("green", (0.2, 0.7, 0.3)),
    ("blue", (0.2, 0.4, 0.8)),
    ("purple", (0.6, 0.3, 0.7)),
    ("gray", (0.5, 0.5, 0.5)),
    ("white", (0.92, 0.92, 0.92)),
)


def _hash_floats(seed: bytes, n: int) -> np.ndarray:
    """n floats in [-1, 1), expanded from sha256(seed || counter)."""
    out = np.empty(n, dtype=np.float64)
    filled = 0
    counter = 0
    while filled < n:
        digest = hashlib.sha256(seed + counter.to_bytes(4, "big")).digest()
        words = np.frombuffer(digest, dtype=">u4").astype(np.float64)
        take = min(len(words), n - filled)
        out[filled : filled + take] = words[:take] / 2147483648.0 - 1.0
        filled += take
        counter += 1
    return out


def _unit(seed: bytes, dim: int) -> np.ndarray:
    v = _hash_floats(seed, dim)
    norm = np.linalg.norm(v)
    if norm < 1e-12:
        v[0] = 1.0
        norm = 1.0
    return (v / norm).astype(np.float32)


class StubEmbedder:
    model_id = "stub-embedder-v1"
    dim = STUB_DIM

    def embed_text(self, text: str) -> np.ndarray:
        return _unit(b"text\x00" + text.encode("utf-8"), self.dim)

    def embed_image(self, img: np.ndarray) -> np.ndarray:
        raw = np.clip(np.round(img * 255.0), 0, 255).astype(np.uint8)
        return _unit(b"image\x00" + raw.tobytes(), self.dim)


class StubSegmenter:
    """Mask = closeness of each pixel to a prompt-derived target color."""

    model_id = "stub-segmenter-v1"

    def segment(self, img: np.ndarray, prompt: str) -> np.ndarray:
        target = _hash_floats(b"seg\x00" + prompt.encode("utf-8"), 3) * 0.5 + 0.5
        dist = np.linalg.norm(img - target[None, None, :], axis=2)
        return 1.0 - dist / np.sqrt(3.0)


def _nearest_color(rgb: np.ndarray) -> str:
    dists = [float(np.linalg.norm(rgb - np.array(c))) for _, c in _PALETTE]
    return _PALETTE[int(np.argmin(dists))][0]


class StubDescriber:
    model_id = "stub-describer-v1"

    def describe(self, img: np.ndarray) -> tuple[list[dict], str]:
        mean = img.reshape(-1, 3).mean(axis=0)
        gray = 0.299 * img[:, :, 0] + 0.587 * img[:, :, 1] + 0.114 * img[:, :, 2]
        tone = "bright" if mean.mean() > 0.5 else "dark"
        texture = "busy" if gray.std() > 0.15 else "smooth"
        color = _nearest_color(mean)
        items = [
            {"name": f"{color} region", "detail": f"dominant {color} area, {texture} texture"},
        ]
        h, w = img.shape[:2]
        overall = f"a {tone} {color} scene, {w} by {h} pixels"
        return items, overall
