"""Image container conventions and file ingestion.

Images are numpy float64 arrays of shape (H, W, 3) with samples in [0, 1].
All pipeline stages share this convention; `require_rgb01` is the cheap
validity gate the public entry points run on their inputs.

Supported file formats: 8-bit RGB PNG (via Pillow) and binary PPM (P6,
maxval 255, parsed here so round-trips are byte-exact and dependency-light).
"""

from __future__ import annotations

import hashlib
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import DimensionInvalid, IoError


def require_rgb01(img: np.ndarray, what: str = "image") -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 3 or img.shape[2] != 3:
        raise DimensionInvalid(f"{what}: expected (H, W, 3), got {img.shape}")
    if img.shape[0] < 1 or img.shape[1] < 1:
        raise DimensionInvalid(f"{what}: empty image {img.shape}")
    if not np.isfinite(img).all():
        raise DimensionInvalid(f"{what}: non-finite samples")
    if img.min() < 0.0 or img.max() > 1.0:
        raise DimensionInvalid(f"{what}: samples outside [0, 1]")
    return img


def to_uint8(img: np.ndarray) -> np.ndarray:
    return np.clip(np.round(np.asarray(img, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)


def from_uint8(raw: np.ndarray) -> np.ndarray:
    return raw.astype(np.float64) / 255.0


def content_hash(img: np.ndarray) -> str:
    """Hex digest of the 8-bit content; keys describer/embedding fixtures."""
    img = np.asarray(img, dtype=np.float64)
    h = hashlib.sha256()
    h.update(np.array(img.shape, dtype="<u4").tobytes())
    h.update(to_uint8(img).tobytes())
    return h.hexdigest()


def load_image(path: str | Path) -> np.ndarray:
    """Read an 8-bit RGB PNG or binary PPM into the [0,1] float convention."""
    path = Path(path)
    if not path.is_file():
        raise IoError(f"no such image file: {path}")
    if path.suffix.lower() == ".ppm":
        return _read_ppm(path)
    try:
        with Image.open(path) as im:
            rgb = im.convert("RGB")
            return from_uint8(np.asarray(rgb, dtype=np.uint8))
    except (OSError, ValueError) as e:
        raise IoError(f"cannot read {path}: {e}") from e


def save_image(img: np.ndarray, path: str | Path) -> None:
    img = require_rgb01(img)
    path = Path(path)
    raw = to_uint8(img)
    if path.suffix.lower() == ".ppm":
        _write_ppm(raw, path)
        return
    Image.fromarray(raw, mode="RGB").save(path, format="PNG")


def _read_ppm(path: Path) -> np.ndarray:
    data = path.read_bytes()
    fields: list[bytes] = []
    pos = 0
    # header = magic, width, height, maxval; '#' starts a comment to EOL
    while len(fields) < 4:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos : pos + 1] == b"#":
            nl = data.find(b"\n", pos)
            pos = len(data) if nl < 0 else nl + 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise IoError(f"{path}: truncated PPM header")
        fields.append(data[start:pos])
    if fields[0] != b"P6":
        raise IoError(f"{path}: not a binary PPM (P6)")
    try:
        w, h, maxval = int(fields[1]), int(fields[2]), int(fields[3])
    except ValueError as e:
        raise IoError(f"{path}: bad PPM header") from e
    if maxval != 255:
        raise IoError(f"{path}: only maxval 255 PPM supported")
    pos += 1  # single whitespace after maxval
    need = w * h * 3
    pixels = data[pos : pos + need]
    if len(pixels) != need:
        raise IoError(f"{path}: PPM pixel data truncated")
    return from_uint8(np.frombuffer(pixels, dtype=np.uint8).reshape(h, w, 3))


def _write_ppm(raw: np.ndarray, path: Path) -> None:
    h, w = raw.shape[:2]
    with open(path, "wb") as f:
        f.write(b"P6\n%d %d\n255\n" % (w, h))
        f.write(raw.tobytes())
