"""HTTP client for the optional model-gateway sidecar.

Wire format: JSON bodies, images as base64 PNG, embeddings as float32
arrays, masks as base64 single-channel PNG. Every provider here degrades
gracefully: when the server is unreachable or the handshake reports the
needed model as null, the embedder falls back to a local one if given,
otherwise raises GatewayUnavailable.
"""

from __future__ import annotations

import base64
import io

import numpy as np

from . import raster
from .errors import GatewayUnavailable, MalformedPayload

DEFAULT_TIMEOUT = 30.0


def _client(timeout: float):
    import httpx  # deferred: only the gateway path needs it

    return httpx.Client(timeout=timeout)


def _post(base_url: str, route: str, body: dict, timeout: float) -> dict:
    import httpx

    url = base_url.rstrip("/") + route
    try:
        with _client(timeout) as client:
            resp = client.post(url, json=body)
    except httpx.HTTPError as exc:
        raise GatewayUnavailable(f"POST {url}: {exc}") from exc
    if resp.status_code != 200:
        detail = resp.text[:200]
        raise GatewayUnavailable(f"POST {url} -> {resp.status_code}: {detail}")
    try:
        obj = resp.json()
    except ValueError as exc:
        raise MalformedPayload(f"POST {url}: response is not JSON") from exc
    if not isinstance(obj, dict):
        raise MalformedPayload(f"POST {url}: response root must be an object")
    return obj


def image_to_b64png(img: np.ndarray) -> str:
    from PIL import Image

    raster.require_rgb01(img, "gateway image")
    buf = io.BytesIO()
    Image.fromarray(raster.to_uint8(img)).save(buf, format="PNG")
    return base64.b64encode(buf.getvalue()).decode("ascii")


def b64png_to_mask(payload: str) -> np.ndarray:
    from PIL import Image

    try:
        raw = base64.b64decode(payload, validate=True)
        im = Image.open(io.BytesIO(raw))
        im.load()
    except Exception as exc:
        raise MalformedPayload(f"mask is not a decodable base64 PNG: {exc}") from exc
    arr = np.asarray(im)
    if arr.ndim != 2:
        raise MalformedPayload(f"mask must be single-channel, got shape {arr.shape}")
    return arr.astype(np.float64) / 255.0


def handshake(base_url: str, timeout: float = DEFAULT_TIMEOUT) -> dict:
    obj = _post(base_url, "/v1/handshake", {}, timeout)
    d = obj.get("d")
    models = obj.get("models")
    if not isinstance(d, int) or d <= 0:
        raise MalformedPayload(f"handshake d must be a positive int, got {d!r}")
    if not isinstance(models, dict):
        raise MalformedPayload("handshake must carry a models object")
    for key in ("embedder", "segmenter", "describer"):
        if key not in models:
            raise MalformedPayload(f"handshake models missing {key!r}")
    return obj


def post_embed(base_url: str, kind: str, payload: str, timeout: float = DEFAULT_TIMEOUT) -> np.ndarray:
    if kind not in ("text", "image"):
        raise MalformedPayload(f"embed kind must be text|image, got {kind!r}")
    obj = _post(base_url, "/v1/embed", {"kind": kind, "payload": payload}, timeout)
    vec = obj.get("vector")
    if not isinstance(vec, list) or not vec:
        raise MalformedPayload("embed response must carry a non-empty vector array")
    arr = np.asarray(vec, dtype=np.float64)
    if arr.ndim != 1 or not np.all(np.isfinite(arr)):
        raise MalformedPayload("embed vector must be a finite 1-d array")
    return arr


def post_segment(base_url: str, img: np.ndarray, prompt: str, timeout: float = DEFAULT_TIMEOUT) -> np.ndarray:
    if not prompt.strip():
        raise MalformedPayload("segment prompt must be non-empty")
    body = {"image": image_to_b64png(img), "prompt": prompt}
    obj = _post(base_url, "/v1/segment", body, timeout)
    if "mask" not in obj:
        raise MalformedPayload("segment response must carry a mask")
    mask = b64png_to_mask(obj["mask"])
    if mask.shape != img.shape[:2]:
        raise MalformedPayload(f"mask shape {mask.shape} does not match image {img.shape[:2]}")
    return mask


def post_describe(base_url: str, img: np.ndarray, timeout: float = DEFAULT_TIMEOUT) -> dict:
    obj = _post(base_url, "/v1/describe", {"image": image_to_b64png(img)}, timeout)
    items = obj.get("items")
    if not isinstance(items, list):
        raise MalformedPayload("describe response must carry an items array")
    for entry in items:
        if not isinstance(entry, dict) or "name" not in entry or "detail" not in entry:
            raise MalformedPayload(f"describe item must have name and detail: {entry!r}")
    if not isinstance(obj.get("overall", ""), str):
        raise MalformedPayload("describe overall must be a string")
    return obj


class GatewayEmbedder:
    """Embedding provider backed by /v1/embed.

    The first call performs the handshake and caches the advertised
    dimension. When the handshake reports the embedder as null, or the
    server is unreachable, all traffic is routed to the fallback provider
    for the rest of this object's life.
    """

    def __init__(self, base_url: str | None, fallback=None, timeout: float = DEFAULT_TIMEOUT):
        if not base_url and fallback is None:
            raise GatewayUnavailable("gateway embedder needs a base_url or a fallback")
        self.base_url = base_url.rstrip("/") if base_url else None
        self.fallback = fallback
        self.timeout = timeout
        self._d: int | None = None
        self._use_fallback = base_url is None

    def _resolve(self) -> None:
        if self._use_fallback or self._d is not None:
            return
        try:
            info = handshake(self.base_url, self.timeout)
        except GatewayUnavailable:
            if self.fallback is None:
                raise
            self._use_fallback = True
            return
        if info["models"].get("embedder") is None:
            if self.fallback is None:
                raise GatewayUnavailable("gateway reports no embedder and no fallback was given")
            self._use_fallback = True
            return
        self._d = int(info["d"])

    @property
    def dim(self) -> int:
        self._resolve()
        if self._use_fallback:
            return self.fallback.dim
        return self._d

    def _checked(self, vec: np.ndarray, what: str) -> np.ndarray:
        if vec.shape != (self._d,):
            raise MalformedPayload(f"{what} embedding has length {vec.shape[0]}, handshake said {self._d}")
        norm = float(np.linalg.norm(vec))
        if abs(norm - 1.0) > 1e-4:
            raise MalformedPayload(f"{what} embedding norm {norm} is not 1")
        return vec

    def embed_text(self, text: str) -> np.ndarray:
        self._resolve()
        if self._use_fallback:
            return self.fallback.embed_text(text)
        return self._checked(post_embed(self.base_url, "text", text, self.timeout), "text")

    def embed_image(self, img: np.ndarray) -> np.ndarray:
        self._resolve()
        if self._use_fallback:
            return self.fallback.embed_image(img)
        vec = post_embed(self.base_url, "image", image_to_b64png(img), self.timeout)
        return self._checked(vec, "image")

    @property
    def using_fallback(self) -> bool:
        self._resolve()
        return self._use_fallback


class GatewaySegmenter:
    """Soft-mask provider backed by /v1/segment. No local fallback: the
    decoder-side similarity path is the default and never needs this."""

    def __init__(self, base_url: str, timeout: float = DEFAULT_TIMEOUT):
        self.base_url = base_url.rstrip("/")
        self.timeout = timeout

    def segment(self, img: np.ndarray, prompt: str) -> np.ndarray:
        return post_segment(self.base_url, img, prompt, self.timeout)
