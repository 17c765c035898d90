"""HTTP sidecar serving embedding, segmentation, and captioning endpoints.

Routes (JSON bodies, images as base64 PNG):

    POST /v1/handshake  -> {d, models{embedder, segmenter, describer}}
    POST /v1/embed      -> {vector, model}         (L2-normalized float32)
    POST /v1/segment    -> {mask, model}           (base64 single-channel PNG)
    POST /v1/describe   -> {items, overall, truncated, model}

Stub mode serves deterministic fixture models so integration tests run
without GPUs or API keys. Without stubs the server reports whichever real
backends are configured; unconfigured endpoints answer 503 and clients are
expected to fall back to their local providers.
"""

from .app import Settings, create_app

__all__ = ["Settings", "create_app"]
