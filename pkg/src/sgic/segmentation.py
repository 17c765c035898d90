"""Object localization from text, two ways.

The decode path derives soft masks on the decoder side only: slide a window
over the initial reconstruction, score each window against the item text in
the shared embedding space, then normalize and upsample the score grid. No
mask bits travel in the stream.

The fallback path (used when decoder-side masking is disabled) quantizes the
original image to an 8x8 item-assignment grid at encode time and ships it as
a fixed-cost payload: 64 * ceil(log2(J + 1)) bits for J items.
"""

from __future__ import annotations

import math

import numpy as np

from . import raster
from .embedding import cosine
from .errors import ImageTooSmall, MalformedPayload, ShapeMismatch
from .semantics import SemanticDescription, SemanticItem

GRID_SIZE = 8
ASSIGN_TAU = 0.2
MASK_PATCH = 16
MASK_STRIDE = 8


def _window_starts(extent: int, patch: int, stride: int) -> list[int]:
    starts = list(range(0, extent - patch + 1, stride))
    if starts[-1] != extent - patch:
        starts.append(extent - patch)  # keep the last window flush with the border
    return starts


def similarity_mask(
    img: np.ndarray,
    item: SemanticItem,
    embedder,
    out_hw: tuple[int, int],
    patch: int = MASK_PATCH,
    stride: int = MASK_STRIDE,
) -> np.ndarray:
    """Soft mask in [0,1] at out_hw resolution for one described item.

    Patch scores are cosine similarities between window embeddings and the
    item text embedding, min-max normalized over the grid (degenerate grids
    fall back to a uniform 0.5) and bilinearly upsampled from the window
    centers.
    """
    img = raster.require_rgb01(img, "similarity_mask input")
    h, w = img.shape[:2]
    if h < patch or w < patch:
        raise ImageTooSmall(f"similarity_mask needs >= {patch}x{patch}, got {w}x{h}")
    out_h, out_w = out_hw
    text = f"{item.name} {item.detail}".strip()
    emb_t = embedder.embed_text(text)

    ys = _window_starts(h, patch, stride)
    xs = _window_starts(w, patch, stride)
    grid = np.empty((len(ys), len(xs)))
    for i, y0 in enumerate(ys):
        for j, x0 in enumerate(xs):
            emb_p = embedder.embed_image(img[y0 : y0 + patch, x0 : x0 + patch])
            grid[i, j] = cosine(emb_p, emb_t)

    lo, hi = grid.min(), grid.max()
    if hi - lo < 1e-12:
        grid = np.full_like(grid, 0.5)
    else:
        grid = (grid - lo) / (hi - lo)

    # Window centers mapped into output pixel coordinates. The output is a
    # scale-up of the scored image, so a source pixel y covers output rows
    # [y*s, (y+1)*s) and its center sits at (y + 0.5)*s - 0.5.
    sy = out_h / h
    sx = out_w / w
    cy = (np.array(ys) + (patch - 1) / 2 + 0.5) * sy - 0.5
    cx = (np.array(xs) + (patch - 1) / 2 + 0.5) * sx - 0.5
    rows = np.empty((len(ys), out_w))
    xq = np.arange(out_w, dtype=np.float64)
    for i in range(len(ys)):
        rows[i] = np.interp(xq, cx, grid[i])
    out = np.empty((out_h, out_w))
    yq = np.arange(out_h, dtype=np.float64)
    for j in range(out_w):
        out[:, j] = np.interp(yq, cy, rows[:, j])
    return out


def masks_for_description(
    img: np.ndarray, d: SemanticDescription, embedder, out_hw: tuple[int, int]
) -> list[np.ndarray]:
    return [similarity_mask(img, item, embedder, out_hw) for item in d.items]


def _cell_bounds(extent: int, k: int) -> int:
    return int(round(k * extent / GRID_SIZE))


def grid_assign(img: np.ndarray, d: SemanticDescription, embedder) -> np.ndarray:
    """8x8 grid of item assignments over the original image.

    Cell value is the 1-based index of the best-matching item by cosine
    similarity against the item name embedding, or 0 when the best score
    falls below tau=0.2. Ties go to the lower item index.
    """
    img = raster.require_rgb01(img, "grid_assign input")
    h, w = img.shape[:2]
    if h < GRID_SIZE or w < GRID_SIZE:
        raise ImageTooSmall(f"grid_assign needs >= {GRID_SIZE}x{GRID_SIZE}, got {w}x{h}")
    name_embs = [embedder.embed_text(item.name) for item in d.items]
    g = np.zeros((GRID_SIZE, GRID_SIZE), dtype=np.uint8)
    for r in range(GRID_SIZE):
        y0, y1 = _cell_bounds(h, r), _cell_bounds(h, r + 1)
        for c in range(GRID_SIZE):
            x0, x1 = _cell_bounds(w, c), _cell_bounds(w, c + 1)
            emb_c = embedder.embed_image(img[y0:y1, x0:x1])
            scores = np.array([cosine(emb_c, ne) for ne in name_embs])
            best = int(np.argmax(scores))  # argmax takes the first max: lower index wins ties
            g[r, c] = best + 1 if scores[best] >= ASSIGN_TAU else 0
    return g


def grid_bits(n_items: int) -> int:
    return GRID_SIZE * GRID_SIZE * max(1, math.ceil(math.log2(n_items + 1)))


def grid_encode(g: np.ndarray, n_items: int) -> bytes:
    """Pack the grid MSB-first at ceil(log2(J+1)) bits per cell."""
    g = np.asarray(g)
    if g.shape != (GRID_SIZE, GRID_SIZE):
        raise ShapeMismatch(f"grid must be {GRID_SIZE}x{GRID_SIZE}, got {g.shape}")
    if (g < 0).any() or (g > n_items).any():
        raise MalformedPayload("grid cell outside [0, n_items]")
    bits_per = max(1, math.ceil(math.log2(n_items + 1)))
    acc = 0
    for v in g.reshape(-1):
        acc = (acc << bits_per) | int(v)
    total = GRID_SIZE * GRID_SIZE * bits_per
    pad = (-total) % 8
    return (acc << pad).to_bytes((total + pad) // 8, "big")


def grid_decode(data: bytes, n_items: int) -> np.ndarray:
    bits_per = max(1, math.ceil(math.log2(n_items + 1)))
    total = GRID_SIZE * GRID_SIZE * bits_per
    nbytes = (total + (-total) % 8) // 8
    if len(data) != nbytes:
        raise MalformedPayload(f"grid payload is {len(data)} bytes, expected {nbytes}")
    acc = int.from_bytes(data, "big") >> ((-total) % 8)
    cells = np.empty(GRID_SIZE * GRID_SIZE, dtype=np.uint8)
    mask = (1 << bits_per) - 1
    for i in range(GRID_SIZE * GRID_SIZE - 1, -1, -1):
        cells[i] = acc & mask
        acc >>= bits_per
    g = cells.reshape(GRID_SIZE, GRID_SIZE)
    if (g > n_items).any():
        raise MalformedPayload("grid cell outside [0, n_items]")
    return g


def grid_to_mask(g: np.ndarray, item_index: int, out_hw: tuple[int, int]) -> np.ndarray:
    """Binary mask for one item, nearest-neighbor upscaled from the grid."""
    g = np.asarray(g)
    if g.shape != (GRID_SIZE, GRID_SIZE):
        raise ShapeMismatch(f"grid must be {GRID_SIZE}x{GRID_SIZE}, got {g.shape}")
    out_h, out_w = out_hw
    mask = np.zeros((out_h, out_w))
    sel = g == item_index
    for r in range(GRID_SIZE):
        y0, y1 = _cell_bounds(out_h, r), _cell_bounds(out_h, r + 1)
        for c in range(GRID_SIZE):
            if sel[r, c]:
                x0, x1 = _cell_bounds(out_w, c), _cell_bounds(out_w, c + 1)
                mask[y0:y1, x0:x1] = 1.0
    return mask
