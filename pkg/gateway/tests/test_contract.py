"""Route contract tests against the in-process ASGI app (stub mode)."""

import base64
import io

import numpy as np
import pytest
from fastapi.testclient import TestClient
from PIL import Image

from model_gateway import Settings, create_app
from model_gateway.app import MAX_TOTAL_WORDS, enforce_budget, word_count


def b64png(img: np.ndarray) -> str:
    raw = np.clip(np.round(img * 255.0), 0, 255).astype(np.uint8)
    buf = io.BytesIO()
    Image.fromarray(raw).save(buf, format="PNG")
    return base64.b64encode(buf.getvalue()).decode("ascii")


def sample_image(h=24, w=32, seed=5) -> np.ndarray:
    rng = np.random.default_rng(seed)
    base = rng.uniform(0.2, 0.8, size=(h, w, 3))
    base[: h // 2, :, 2] = 0.9
    return base


@pytest.fixture(scope="module")
def stub():
    return TestClient(create_app(Settings(stub=True)))


@pytest.fixture(scope="module")
def bare():
    return TestClient(create_app(Settings()))


def test_handshake_schema(stub):
    resp = stub.post("/v1/handshake")
    assert resp.status_code == 200
    body = resp.json()
    assert isinstance(body["d"], int) and body["d"] > 0
    models = body["models"]
    assert set(models) == {"embedder", "segmenter", "describer"}
    for name in models.values():
        assert isinstance(name, str) and name


def test_handshake_idempotent(stub):
    first = stub.post("/v1/handshake").json()
    second = stub.post("/v1/handshake").json()
    assert first == second


def test_handshake_load_failure_is_503():
    client = TestClient(create_app(Settings(stub=True, load_error="weights corrupt")))
    resp = client.post("/v1/handshake")
    assert resp.status_code == 503
    assert "weights corrupt" in resp.json()["detail"]


def test_embed_text_schema_and_norm(stub):
    d = stub.post("/v1/handshake").json()["d"]
    resp = stub.post("/v1/embed", json={"kind": "text", "payload": "a blue mountain"})
    assert resp.status_code == 200
    body = resp.json()
    assert isinstance(body["model"], str)
    vec = np.asarray(body["vector"], dtype=np.float64)
    assert vec.shape == (d,)
    assert abs(np.linalg.norm(vec) - 1.0) <= 1e-5


def test_embed_text_deterministic(stub):
    a = stub.post("/v1/embed", json={"kind": "text", "payload": "same text"}).json()["vector"]
    b = stub.post("/v1/embed", json={"kind": "text", "payload": "same text"}).json()["vector"]
    assert a == b


def test_embed_image_schema_and_norm(stub):
    d = stub.post("/v1/handshake").json()["d"]
    resp = stub.post("/v1/embed", json={"kind": "image", "payload": b64png(sample_image())})
    assert resp.status_code == 200
    vec = np.asarray(resp.json()["vector"], dtype=np.float64)
    assert vec.shape == (d,)
    assert abs(np.linalg.norm(vec) - 1.0) <= 1e-5


def test_embed_distinct_inputs_distinct_vectors(stub):
    a = stub.post("/v1/embed", json={"kind": "text", "payload": "one"}).json()["vector"]
    b = stub.post("/v1/embed", json={"kind": "text", "payload": "two"}).json()["vector"]
    assert a != b


@pytest.mark.parametrize(
    "body",
    [
        {"kind": "audio", "payload": "x"},
        {"kind": "text", "payload": "   "},
        {"kind": "text"},
        {"kind": "image", "payload": "not base64!!"},
        {"payload": "x"},
        {"kind": "text", "payload": 7},
        [1, 2, 3],
    ],
)
def test_embed_malformed_is_400(stub, body):
    resp = stub.post("/v1/embed", json=body)
    assert resp.status_code == 400
    assert isinstance(resp.json()["detail"], str)


def test_embed_unparseable_json_is_400(stub):
    resp = stub.post(
        "/v1/embed", content=b"{not json", headers={"content-type": "application/json"}
    )
    assert resp.status_code == 400


def test_embed_oversized_image_is_413():
    client = TestClient(create_app(Settings(stub=True, max_image_bytes=64)))
    resp = client.post("/v1/embed", json={"kind": "image", "payload": b64png(sample_image())})
    assert resp.status_code == 413


def test_segment_mask_contract(stub):
    img = sample_image()
    resp = stub.post("/v1/segment", json={"image": b64png(img), "prompt": "blue region"})
    assert resp.status_code == 200
    body = resp.json()
    assert isinstance(body["model"], str)
    raw = base64.b64decode(body["mask"])
    with Image.open(io.BytesIO(raw)) as im:
        arr = np.asarray(im)
    assert arr.ndim == 2
    assert arr.shape == img.shape[:2]
    mask = arr / 255.0
    assert mask.min() >= 0.0 and mask.max() <= 1.0


def test_segment_deterministic(stub):
    img = sample_image()
    body = {"image": b64png(img), "prompt": "blue region"}
    a = stub.post("/v1/segment", json=body).json()["mask"]
    b = stub.post("/v1/segment", json=body).json()["mask"]
    assert a == b


def test_segment_empty_prompt_is_400(stub):
    resp = stub.post("/v1/segment", json={"image": b64png(sample_image()), "prompt": " "})
    assert resp.status_code == 400


def test_segment_oversized_image_is_413():
    client = TestClient(create_app(Settings(stub=True, max_image_bytes=64)))
    resp = client.post(
        "/v1/segment", json={"image": b64png(sample_image()), "prompt": "anything"}
    )
    assert resp.status_code == 413


def test_describe_schema(stub):
    resp = stub.post("/v1/describe", json={"image": b64png(sample_image())})
    assert resp.status_code == 200
    body = resp.json()
    assert isinstance(body["model"], str)
    assert isinstance(body["items"], list) and body["items"]
    for item in body["items"]:
        assert isinstance(item["name"], str) and item["name"].split()
        assert isinstance(item["detail"], str)
    assert isinstance(body["overall"], str)
    assert body["truncated"] is False
    assert word_count(body["items"], body["overall"]) <= MAX_TOTAL_WORDS


def test_describe_malformed_image_is_400(stub):
    resp = stub.post("/v1/describe", json={"image": "zzzz"})
    assert resp.status_code == 400


def test_budget_truncation_flags_and_fits():
    items = [
        {"name": "sky", "detail": " ".join(f"w{i}" for i in range(70))},
        {"name": "sea", "detail": " ".join(f"v{i}" for i in range(40))},
    ]
    overall = "a very long panorama of everything at once"
    out_items, out_overall, truncated = enforce_budget(items, overall)
    assert truncated is True
    assert word_count(out_items, out_overall) <= MAX_TOTAL_WORDS
    assert out_items[0]["name"] == "sky"
    assert out_items[1]["name"] == "sea"


def test_budget_noop_under_cap():
    items = [{"name": "sky", "detail": "clear"}]
    out_items, out_overall, truncated = enforce_budget(items, "tiny scene")
    assert truncated is False
    assert out_items == items
    assert out_overall == "tiny scene"


def test_unconfigured_models_report_null_and_503(bare):
    body = bare.post("/v1/handshake").json()
    assert body["models"] == {"embedder": None, "segmenter": None, "describer": None}
    resp = bare.post("/v1/embed", json={"kind": "text", "payload": "x"})
    assert resp.status_code == 503
    resp = bare.post("/v1/segment", json={"image": b64png(sample_image()), "prompt": "x"})
    assert resp.status_code == 503


def test_describe_without_api_key_is_502(bare):
    resp = bare.post("/v1/describe", json={"image": b64png(sample_image())})
    assert resp.status_code == 502
    assert "API key" in resp.json()["detail"]


@pytest.mark.parametrize("route", ["/v1/embed", "/v1/segment", "/v1/describe"])
def test_never_malformed_200(stub, route):
    """Garbage bodies never produce a 200; errors are JSON with a detail."""
    for payload in ({}, {"junk": 1}, {"image": 5}, {"kind": None}):
        resp = stub.post(route, json=payload)
        assert 400 <= resp.status_code < 600
        assert isinstance(resp.json()["detail"], str)
