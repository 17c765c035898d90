"""FastAPI application: route handlers, validation, error mapping.

Contract: every 200 response satisfies its declared schema; anything else
is a 4xx/5xx with a JSON detail field. Malformed bodies answer 400 (including
unparseable JSON, which FastAPI would otherwise report as 422), oversized
images 413, unconfigured models 503, upstream captioner trouble 502/429.
"""

from __future__ import annotations

import base64
import io
import os
from dataclasses import dataclass, field

import numpy as np
from fastapi import FastAPI, HTTPException, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse
from PIL import Image

from .stubs import STUB_DIM, StubDescriber, StubEmbedder, StubSegmenter

API_KEY_ENV = "MODEL_GATEWAY_API_KEY"
MAX_TOTAL_WORDS = 80
DEFAULT_MAX_IMAGE_BYTES = 4 << 20


@dataclass
class Settings:
    stub: bool = False
    api_key: str | None = field(default=None, repr=False)
    dim: int = STUB_DIM
    max_image_bytes: int = DEFAULT_MAX_IMAGE_BYTES
    load_error: str | None = None  # set when a configured model failed to load

    @classmethod
    def from_env(cls, stub: bool = False) -> "Settings":
        return cls(stub=stub, api_key=os.environ.get(API_KEY_ENV))


def _bad(reason: str) -> HTTPException:
    return HTTPException(status_code=400, detail=reason)


def decode_image(payload, max_bytes: int) -> np.ndarray:
    """base64 PNG -> float RGB in [0,1]. 400 on garbage, 413 on oversize."""
    if not isinstance(payload, str) or not payload:
        raise _bad("image must be a non-empty base64 string")
    if len(payload) > (max_bytes * 4) // 3 + 8:
        raise HTTPException(status_code=413, detail="image payload too large")
    try:
        raw = base64.b64decode(payload, validate=True)
    except Exception as exc:
        raise _bad(f"image is not valid base64: {exc}")
    if len(raw) > max_bytes:
        raise HTTPException(status_code=413, detail="image payload too large")
    try:
        with Image.open(io.BytesIO(raw)) as im:
            rgb = im.convert("RGB")
            arr = np.asarray(rgb, dtype=np.uint8)
    except Exception as exc:
        raise _bad(f"image does not decode as PNG: {exc}")
    return arr.astype(np.float64) / 255.0


def mask_to_b64png(mask: np.ndarray) -> str:
    raw = np.clip(np.round(mask * 255.0), 0, 255).astype(np.uint8)
    buf = io.BytesIO()
    Image.fromarray(raw, mode="L").save(buf, format="PNG")
    return base64.b64encode(buf.getvalue()).decode("ascii")


def word_count(items: list[dict], overall: str) -> int:
    n = len(overall.split())
    for it in items:
        n += len(str(it.get("name", "")).split()) + len(str(it.get("detail", "")).split())
    return n


def enforce_budget(items: list[dict], overall: str) -> tuple[list[dict], str, bool]:
    """Drop trailing words from detail fields (longest first), then from the
    overall text, until the total fits the word cap."""
    items = [dict(it) for it in items]
    truncated = False
    while word_count(items, overall) > MAX_TOTAL_WORDS:
        lengths = [len(str(it["detail"]).split()) for it in items]
        if lengths and max(lengths) > 0:
            i = int(np.argmax(lengths))
            items[i]["detail"] = " ".join(str(items[i]["detail"]).split()[:-1])
        elif overall.split():
            overall = " ".join(overall.split()[:-1])
        else:
            items = items[:1]
            break
        truncated = True
    return items, overall, truncated


def create_app(settings: Settings | None = None) -> FastAPI:
    settings = settings or Settings.from_env()
    embedder = StubEmbedder() if settings.stub else None
    segmenter = StubSegmenter() if settings.stub else None
    describer = StubDescriber() if settings.stub else None
    if settings.stub:
        settings.dim = embedder.dim

    app = FastAPI(title="model-gateway", docs_url=None, redoc_url=None)

    @app.exception_handler(RequestValidationError)
    async def _invalid_body(request: Request, exc: RequestValidationError):
        return JSONResponse(status_code=400, content={"detail": "malformed request body"})

    def body_field(body, key: str, kind: type, what: str):
        value = body.get(key) if isinstance(body, dict) else None
        if not isinstance(value, kind):
            raise _bad(f"{what}: field {key!r} must be {kind.__name__}")
        return value

    @app.post("/v1/handshake")
    async def v1_handshake(body: dict | None = None):
        if settings.load_error:
            raise HTTPException(status_code=503, detail=f"model load failed: {settings.load_error}")
        return {
            "d": settings.dim,
            "models": {
                "embedder": embedder.model_id if embedder else None,
                "segmenter": segmenter.model_id if segmenter else None,
                "describer": describer.model_id if describer else None,
            },
        }

    @app.post("/v1/embed")
    async def v1_embed(body: dict):
        if embedder is None:
            raise HTTPException(status_code=503, detail="no embedder configured")
        kind = body_field(body, "kind", str, "embed")
        payload = body_field(body, "payload", str, "embed")
        if kind == "text":
            if not payload.strip():
                raise _bad("embed: empty text payload")
            vec = embedder.embed_text(payload)
        elif kind == "image":
            vec = embedder.embed_image(decode_image(payload, settings.max_image_bytes))
        else:
            raise _bad(f"embed: kind must be text|image, got {kind!r}")
        return {"vector": [float(x) for x in vec], "model": embedder.model_id}

    @app.post("/v1/segment")
    async def v1_segment(body: dict):
        if segmenter is None:
            raise HTTPException(status_code=503, detail="no segmenter configured")
        prompt = body_field(body, "prompt", str, "segment")
        if not prompt.strip():
            raise _bad("segment: empty prompt")
        img = decode_image(body.get("image"), settings.max_image_bytes)
        mask = np.clip(segmenter.segment(img, prompt), 0.0, 1.0)
        return {"mask": mask_to_b64png(mask), "model": segmenter.model_id}

    @app.post("/v1/describe")
    async def v1_describe(body: dict):
        img = decode_image(body.get("image"), settings.max_image_bytes)
        if describer is None:
            if not settings.api_key:
                raise HTTPException(status_code=502, detail="upstream API key not configured")
            raise HTTPException(status_code=502, detail="no captioning backend configured")
        items, overall = describer.describe(img)
        items, overall, truncated = enforce_budget(items, overall)
        return {
            "items": items,
            "overall": overall,
            "truncated": truncated,
            "model": describer.model_id,
        }

    return app
