"""Feature extraction for the step/cfg controller.

Eight features of the low-bitrate initial reconstruction, in this order:

    edge_density        Canny edge pixels / total pixels
    log_laplacian_var   log(1 + variance of 3x3 Laplacian response)
    entropy             Shannon entropy of the 256-bin gray histogram, bits
    rms_contrast        standard deviation of the gray plane
    colorfulness        sqrt(var(R-G) + var((R+G)/2 - B)); flat fields -> 0
    noise_sigma         MAD of the finest Haar diagonal band / 0.6745
    quality_alignment   cosine(image embedding, sharp-photo prompt embedding)
    semantic_alignment  cosine(semantics embedding, image embedding)

All are pure functions of (image bytes, description, embedding provider).
Controller model files pin the feature schema (names + z-score statistics)
by hash, so a reordered or retuned feature set cannot silently feed a model
trained against the old one.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from . import raster
from .embedding import cosine
from .errors import ImageTooSmall, SchemaMismatch
from .semantics import SemanticDescription

FEATURE_NAMES = (
    "edge_density",
    "log_laplacian_var",
    "entropy",
    "rms_contrast",
    "colorfulness",
    "noise_sigma",
    "quality_alignment",
    "semantic_alignment",
)

QUALITY_PROMPT = "a sharp high quality photo"

CANNY_LOW = 0.1
CANNY_HIGH = 0.3
_GAUSS_SIZE = 5
_GAUSS_SIGMA = 1.4


def grayscale(img: np.ndarray) -> np.ndarray:
    img = raster.require_rgb01(img, "grayscale input")
    return 0.299 * img[:, :, 0] + 0.587 * img[:, :, 1] + 0.114 * img[:, :, 2]


def _gauss_kernel() -> np.ndarray:
    half = _GAUSS_SIZE // 2
    ax = np.arange(-half, half + 1, dtype=np.float64)
    g = np.exp(-(ax**2) / (2 * _GAUSS_SIGMA**2))
    k = np.outer(g, g)
    return k / k.sum()


_GAUSS = _gauss_kernel()
_SOBEL_X = np.array([[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]])
_LAPLACIAN = np.array([[0.0, 1.0, 0.0], [1.0, -4.0, 1.0], [0.0, 1.0, 0.0]])


def canny_edges(gray: np.ndarray) -> np.ndarray:
    """Boolean edge map: Gaussian 5x5 sigma 1.4, Sobel, non-max suppression,
    hysteresis at 0.1/0.3 of the peak gradient magnitude."""
    smooth = ndimage.convolve(gray, _GAUSS, mode="reflect")
    gx = ndimage.convolve(smooth, _SOBEL_X, mode="reflect")
    gy = ndimage.convolve(smooth, _SOBEL_X.T, mode="reflect")
    mag = np.hypot(gx, gy)
    peak = mag.max()
    if peak < 1e-10:  # flat field: normalizing would amplify rounding dust
        return np.zeros_like(gray, dtype=bool)
    mag = mag / peak

    # Non-max suppression along the quantized gradient direction. Neighbor
    # comparisons use >= on both sides and the class boundaries avoid the
    # diagonal sign, keeping the result exactly mirror-symmetric.
    padded = np.pad(mag, 1, mode="constant")
    ax = np.abs(gx)
    ay = np.abs(gy)
    t = np.tan(np.pi / 8)
    ew = ay <= t * ax                     # gradient ~horizontal
    ns = ~ew & (ax <= t * ay)             # gradient ~vertical
    diag_main = ~ew & ~ns & (gx * gy > 0)  # gradient ~45 deg in array coords
    diag_anti = ~ew & ~ns & ~diag_main

    c = padded[1:-1, 1:-1]
    keep = np.zeros_like(mag, dtype=bool)
    keep |= ew & (c >= padded[1:-1, 2:]) & (c >= padded[1:-1, :-2])
    keep |= ns & (c >= padded[2:, 1:-1]) & (c >= padded[:-2, 1:-1])
    keep |= diag_main & (c >= padded[2:, 2:]) & (c >= padded[:-2, :-2])
    keep |= diag_anti & (c >= padded[2:, :-2]) & (c >= padded[:-2, 2:])
    thin = np.where(keep, mag, 0.0)

    strong = thin >= CANNY_HIGH
    weak = thin >= CANNY_LOW
    if not strong.any():
        return np.zeros_like(gray, dtype=bool)
    labels, _ = ndimage.label(weak, structure=np.ones((3, 3), dtype=int))
    hits = np.unique(labels[strong])
    return np.isin(labels, hits[hits > 0])


def edge_density(img: np.ndarray) -> float:
    img = raster.require_rgb01(img, "edge_density input")
    h, w = img.shape[:2]
    if h < 16 or w < 16:
        raise ImageTooSmall(f"edge_density needs >= 16x16, got {w}x{h}")
    edges = canny_edges(grayscale(img))
    return float(edges.sum()) / (h * w)


def blurriness(img: np.ndarray) -> float:
    """Variance of the 3x3 Laplacian response over interior pixels."""
    img = raster.require_rgb01(img, "blurriness input")
    h, w = img.shape[:2]
    if h < 3 or w < 3:
        raise ImageTooSmall(f"blurriness needs >= 3x3, got {w}x{h}")
    gray = grayscale(img)
    # Neighbor pairs grouped symmetrically and the reduction done in sorted
    # order, so the result is bit-identical under horizontal/vertical flips.
    horiz = gray[1:-1, :-2] + gray[1:-1, 2:]
    vert = gray[:-2, 1:-1] + gray[2:, 1:-1]
    resp = (horiz + vert) - 4.0 * gray[1:-1, 1:-1]
    return float(np.sort(resp, axis=None).var())


def perceptual_proxies(img: np.ndarray) -> tuple[float, float, float, float]:
    img = raster.require_rgb01(img, "perceptual_proxies input")
    gray = grayscale(img)

    bins = np.minimum((gray * 256).astype(np.int64), 255)
    counts = np.bincount(bins.reshape(-1), minlength=256).astype(np.float64)
    p = counts[counts > 0] / counts.sum()
    entropy = max(0.0, float(-(p * np.log2(p)).sum()))

    rms_contrast = float(gray.std())

    rg = img[:, :, 0] - img[:, :, 1]
    yb = 0.5 * (img[:, :, 0] + img[:, :, 1]) - img[:, :, 2]
    colorfulness = float(np.sqrt(rg.var() + yb.var()))

    h, w = gray.shape
    even = gray[: h - h % 2, : w - w % 2]
    if even.size == 0:
        noise_sigma = 0.0
    else:
        d = 0.5 * (even[0::2, 0::2] - even[0::2, 1::2] - even[1::2, 0::2] + even[1::2, 1::2])
        mad = np.median(np.abs(d - np.median(d)))
        noise_sigma = float(mad / 0.6745)

    return entropy, rms_contrast, colorfulness, noise_sigma


def quality_alignment(img: np.ndarray, embedder) -> float:
    return cosine(embedder.embed_image(img), embedder.embed_text(QUALITY_PROMPT))


def semantic_alignment(img: np.ndarray, d: SemanticDescription, embedder) -> float:
    text = " ".join(s for s in [d.overall] + d.names() if s.strip())
    return cosine(embedder.embed_text(text), embedder.embed_image(img))


def raw_features(img: np.ndarray, d: SemanticDescription, embedder) -> np.ndarray:
    ent, rms, col, noise = perceptual_proxies(img)
    return np.array(
        [
            edge_density(img),
            np.log1p(blurriness(img)),
            ent,
            rms,
            col,
            noise,
            quality_alignment(img, embedder),
            semantic_alignment(img, d, embedder),
        ]
    )


@dataclass(frozen=True)
class FeatureSchema:
    """Feature names plus the z-score statistics frozen at training time."""

    names: tuple[str, ...]
    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        if len(self.names) != len(self.mean) or len(self.names) != len(self.std):
            raise SchemaMismatch("schema names/stats length disagreement")
        if (np.asarray(self.std) <= 0).any():
            raise SchemaMismatch("schema std entries must be positive")

    @property
    def dim(self) -> int:
        return len(self.names)

    def schema_hash(self) -> bytes:
        h = hashlib.sha256()
        h.update(b"sgic-feature-schema-v1\x00")
        h.update("\x1f".join(self.names).encode("utf-8"))
        h.update(np.asarray(self.mean, dtype="<f8").tobytes())
        h.update(np.asarray(self.std, dtype="<f8").tobytes())
        return h.digest()

    def normalize(self, raw: np.ndarray) -> np.ndarray:
        raw = np.asarray(raw, dtype=np.float64)
        if raw.shape[-1] != self.dim:
            raise SchemaMismatch(f"feature vector dim {raw.shape[-1]} != schema dim {self.dim}")
        return (raw - self.mean) / self.std

    def unnormalize(self, z: np.ndarray) -> np.ndarray:
        return np.asarray(z, dtype=np.float64) * self.std + self.mean


def fit_schema(raws: np.ndarray, names: tuple[str, ...] = FEATURE_NAMES) -> FeatureSchema:
    raws = np.asarray(raws, dtype=np.float64)
    mean = raws.mean(axis=0)
    std = raws.std(axis=0)
    std = np.where(std > 1e-12, std, 1.0)  # constant feature: pass through unscaled
    return FeatureSchema(names=tuple(names), mean=mean, std=std)


def build_features(
    img: np.ndarray, d: SemanticDescription, embedder, schema: FeatureSchema
) -> np.ndarray:
    """Raw features in declared order, z-scored with the schema statistics."""
    return schema.normalize(raw_features(img, d, embedder))
