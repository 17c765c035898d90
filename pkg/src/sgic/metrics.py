"""Quality metrics and the grouped-score report.

Reference metrics (psnr, ssim, ms_ssim, perceptual_distance) compare a
reconstruction against the original. No-reference scores reuse the feature
module's proxies plus the sharp-photo alignment. normalize_and_group maps
every raw value into [0,1] through a shipped range table and averages within
three groups: pixel, perceptual-similarity, perceptual-quality. Distance
metrics carry a '-' orientation in the table and are inverted after
normalization so every reported number is higher-is-better.

perceptual_distance is a deterministic composite (structure term + embedding
term), not a learned metric; the controller only needs a consistent scalar
to rank decodes with.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from importlib import resources

import numpy as np
from scipy import ndimage

from . import raster
from .embedding import cosine
from .errors import DegenerateRange, ImageTooSmall, IoError, ShapeMismatch, UnknownMetric
from .features import grayscale, perceptual_proxies, quality_alignment

_K1 = 0.01
_K2 = 0.03
_WIN = 11
_WIN_SIGMA = 1.5
_MS_WEIGHTS = np.array([0.0448, 0.2856, 0.3001, 0.2363, 0.1333])

GROUPS = {
    "pixel": ("psnr", "ssim", "ms_ssim"),
    "perceptual-similarity": ("perceptual_distance",),
    "perceptual-quality": (
        "entropy",
        "rms_contrast",
        "colorfulness",
        "noise_sigma",
        "quality_alignment",
    ),
}


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    a = raster.require_rgb01(a, "psnr first input")
    b = raster.require_rgb01(b, "psnr second input")
    if a.shape != b.shape:
        raise ShapeMismatch(f"psnr shapes {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)


def _win_kernel() -> np.ndarray:
    half = _WIN // 2
    ax = np.arange(-half, half + 1, dtype=np.float64)
    g = np.exp(-(ax**2) / (2 * _WIN_SIGMA**2))
    return g / g.sum()


_WK = _win_kernel()


def _wfilter(x: np.ndarray) -> np.ndarray:
    y = ndimage.convolve1d(x, _WK, axis=0, mode="reflect")
    return ndimage.convolve1d(y, _WK, axis=1, mode="reflect")


def _ssim_terms(ga: np.ndarray, gb: np.ndarray) -> tuple[float, float, float]:
    """Mean luminance, full ssim, and contrast-structure terms over the map."""
    c1 = _K1**2
    c2 = _K2**2
    mu_a = _wfilter(ga)
    mu_b = _wfilter(gb)
    var_a = _wfilter(ga * ga) - mu_a * mu_a
    var_b = _wfilter(gb * gb) - mu_b * mu_b
    cov = _wfilter(ga * gb) - mu_a * mu_b
    lum = (2 * mu_a * mu_b + c1) / (mu_a**2 + mu_b**2 + c1)
    cs = (2 * cov + c2) / (var_a + var_b + c2)
    return float(lum.mean()), float((lum * cs).mean()), float(cs.mean())


def ssim(a: np.ndarray, b: np.ndarray) -> float:
    a = raster.require_rgb01(a, "ssim first input")
    b = raster.require_rgb01(b, "ssim second input")
    if a.shape != b.shape:
        raise ShapeMismatch(f"ssim shapes {a.shape} vs {b.shape}")
    if min(a.shape[:2]) < _WIN:
        raise ImageTooSmall(f"ssim needs >= {_WIN} pixels per side, got {a.shape[1]}x{a.shape[0]}")
    _, full, _ = _ssim_terms(grayscale(a), grayscale(b))
    return full


def _halve(x: np.ndarray) -> np.ndarray:
    h, w = x.shape
    x = x[: h - h % 2, : w - w % 2]
    return 0.25 * (x[0::2, 0::2] + x[0::2, 1::2] + x[1::2, 0::2] + x[1::2, 1::2])


def ms_ssim_scales(hw: tuple[int, int]) -> int:
    """Number of usable scales: each halving must keep both sides >= 11."""
    n = 1
    m = min(hw)
    while n < len(_MS_WEIGHTS) and m // 2 >= _WIN:
        m //= 2
        n += 1
    return n


def ms_ssim(a: np.ndarray, b: np.ndarray) -> float:
    a = raster.require_rgb01(a, "ms_ssim first input")
    b = raster.require_rgb01(b, "ms_ssim second input")
    if a.shape != b.shape:
        raise ShapeMismatch(f"ms_ssim shapes {a.shape} vs {b.shape}")
    if min(a.shape[:2]) < _WIN:
        raise ImageTooSmall(
            f"ms_ssim needs >= {_WIN} pixels per side, got {a.shape[1]}x{a.shape[0]}"
        )
    n = ms_ssim_scales(a.shape[:2])
    weights = _MS_WEIGHTS[:n] / _MS_WEIGHTS[:n].sum()
    ga, gb = grayscale(a), grayscale(b)
    score = 1.0
    for k in range(n):
        lum, full, cs = _ssim_terms(ga, gb)
        if k == n - 1:
            score *= max(full, 0.0) ** weights[k]
        else:
            score *= max(cs, 0.0) ** weights[k]
            ga, gb = _halve(ga), _halve(gb)
    return float(score)


def perceptual_distance(a: np.ndarray, b: np.ndarray, embedder) -> float:
    """0.5*(1 - ms_ssim) + 0.5*(1 - embedding cosine); 0 iff structure and
    feature statistics both match."""
    d_struct = 1.0 - ms_ssim(a, b)
    d_embed = 1.0 - cosine(embedder.embed_image(a), embedder.embed_image(b))
    return max(0.0, 0.5 * d_struct + 0.5 * d_embed)


def blind_quality(img: np.ndarray, embedder) -> dict[str, float]:
    ent, rms, col, noise = perceptual_proxies(img)
    return {
        "entropy": ent,
        "rms_contrast": rms,
        "colorfulness": col,
        "noise_sigma": noise,
        "quality_alignment": quality_alignment(img, embedder),
    }


def reference_metrics(original: np.ndarray, decoded: np.ndarray, embedder) -> dict[str, float]:
    """All raw metrics for one (original, reconstruction) pair."""
    raw = {
        "psnr": psnr(original, decoded),
        "ssim": ssim(original, decoded),
        "ms_ssim": ms_ssim(original, decoded),
        "perceptual_distance": perceptual_distance(original, decoded, embedder),
    }
    raw.update(blind_quality(decoded, embedder))
    return raw


@dataclass(frozen=True)
class MetricRange:
    lo: float
    hi: float
    invert: bool  # '-' orientation: lower raw value is better


@dataclass(frozen=True)
class MetricReport:
    raw: dict[str, float]
    normalized: dict[str, float]
    group_means: dict[str, float]
    bpp: float


def load_range_table(path=None) -> dict[str, MetricRange]:
    """CSV records: metric,lo,hi,orientation with orientation '+' or '-'."""
    if path is None:
        src = resources.files("sgic.data").joinpath("metric_ranges.csv")
        text = src.read_text(encoding="utf-8")
    else:
        try:
            with open(path, encoding="utf-8") as fp:
                text = fp.read()
        except OSError as exc:
            raise IoError(f"cannot read range table {path}: {exc}") from exc
    table: dict[str, MetricRange] = {}
    for row in csv.reader(text.splitlines()):
        if not row or row[0].startswith("#") or row[0] == "metric":
            continue
        if len(row) != 4:
            raise IoError(f"range table row needs 4 fields, got {row!r}")
        name, lo_s, hi_s, orient = (f.strip() for f in row)
        lo, hi = float(lo_s), float(hi_s)
        if not hi > lo:
            raise DegenerateRange(f"range for {name} is [{lo}, {hi}]")
        if orient not in ("+", "-"):
            raise IoError(f"orientation for {name} must be + or -, got {orient!r}")
        table[name] = MetricRange(lo=lo, hi=hi, invert=orient == "-")
    return table


def normalize_and_group(
    raw: dict[str, float], table: dict[str, MetricRange], bpp: float = 0.0
) -> MetricReport:
    normalized: dict[str, float] = {}
    for name, value in raw.items():
        if name not in table:
            raise UnknownMetric(f"no range declared for metric {name!r}")
        r = table[name]
        v = min(max((value - r.lo) / (r.hi - r.lo), 0.0), 1.0)
        normalized[name] = 1.0 - v if r.invert else v
    group_means = {}
    for group, members in GROUPS.items():
        present = [normalized[m] for m in members if m in normalized]
        if present:
            group_means[group] = float(np.mean(present))
    return MetricReport(raw=dict(raw), normalized=normalized, group_means=group_means, bpp=bpp)
