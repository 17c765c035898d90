"""Structured textual scene semantics: item names, item details, overall text.

The encoder stores one of these per image; the decoder conditions diffusion
on it. Budget: at most 8 items, at most 80 words across all fields (soft
target 60, warned). Wire format is length-prefixed UTF-8 so the bitstream
module can account for its size bit-exactly.
"""

from __future__ import annotations

import json
import logging
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import raster
from .errors import FixtureMissing, GatewayUnavailable, MalformedPayload

log = logging.getLogger(__name__)

MAX_ITEMS = 8
MAX_NAME_WORDS = 5
MAX_TOTAL_WORDS = 80
TARGET_TOTAL_WORDS = 60


@dataclass(frozen=True)
class SemanticItem:
    name: str
    detail: str


@dataclass(frozen=True)
class SemanticDescription:
    items: tuple[SemanticItem, ...]
    overall: str

    def names(self) -> list[str]:
        return [it.name for it in self.items]


def _check_text(s: str, what: str) -> None:
    if not isinstance(s, str):
        raise MalformedPayload(f"{what} is not text")
    for ch in s:
        if ch != "\n" and (ord(ch) < 0x20 or ord(ch) == 0x7F):
            raise MalformedPayload(f"{what} contains control character {ord(ch):#x}")


def word_count(d: SemanticDescription) -> int:
    """Whitespace-delimited token count over every field."""
    n = len(d.overall.split())
    for it in d.items:
        n += len(it.name.split()) + len(it.detail.split())
    return n


def validate(d: SemanticDescription) -> SemanticDescription:
    if not 1 <= len(d.items) <= MAX_ITEMS:
        raise MalformedPayload(f"item count {len(d.items)} outside 1..{MAX_ITEMS}")
    for it in d.items:
        _check_text(it.name, "item name")
        _check_text(it.detail, "item detail")
        if not it.name.split():
            raise MalformedPayload("empty item name")
        if len(it.name.split()) > MAX_NAME_WORDS:
            raise MalformedPayload(f"item name over {MAX_NAME_WORDS} words: {it.name!r}")
    _check_text(d.overall, "overall description")
    n = word_count(d)
    if n > MAX_TOTAL_WORDS:
        raise MalformedPayload(f"description has {n} words, cap is {MAX_TOTAL_WORDS}")
    if n > TARGET_TOTAL_WORDS:
        log.warning("description has %d words, above the %d-word target", n, TARGET_TOTAL_WORDS)
    return d


def make_description(items: list[tuple[str, str]], overall: str) -> SemanticDescription:
    return validate(SemanticDescription(tuple(SemanticItem(n, t) for n, t in items), overall))


# --- wire format: u8 item count, per item two (u16be length + UTF-8), then overall ---

def _put_str(buf: bytearray, s: str) -> None:
    raw = s.encode("utf-8")
    if len(raw) > 0xFFFF:
        raise MalformedPayload("string field too long for u16 length prefix")
    buf += struct.pack(">H", len(raw))
    buf += raw


def serialize(d: SemanticDescription) -> bytes:
    validate(d)
    buf = bytearray()
    buf.append(len(d.items))
    for it in d.items:
        _put_str(buf, it.name)
        _put_str(buf, it.detail)
    _put_str(buf, d.overall)
    return bytes(buf)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise MalformedPayload("semantics payload truncated")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def take_str(self) -> str:
        (n,) = struct.unpack(">H", self.take(2))
        raw = self.take(n)
        try:
            return raw.decode("utf-8")
        except UnicodeDecodeError as e:
            raise MalformedPayload(f"invalid UTF-8 in semantics payload: {e}") from e


def deserialize(data: bytes) -> SemanticDescription:
    r = _Reader(data)
    count = r.take(1)[0]
    if not 1 <= count <= MAX_ITEMS:
        raise MalformedPayload(f"item count byte {count} outside 1..{MAX_ITEMS}")
    items = []
    for _ in range(count):
        name = r.take_str()
        detail = r.take_str()
        items.append(SemanticItem(name, detail))
    overall = r.take_str()
    if r.pos != len(data):
        raise MalformedPayload(f"{len(data) - r.pos} trailing bytes after semantics payload")
    return validate(SemanticDescription(tuple(items), overall))


# --- describer providers ---
#
# Fixtures file grammar, one record per line:
#   <hex sha256 of 8-bit image content> TAB <JSON {"items":[{"name":..,"detail":..},..],"overall":..}>
# Blank lines and lines starting with '#' are ignored.

def description_to_json(d: SemanticDescription) -> str:
    return json.dumps(
        {"items": [{"name": it.name, "detail": it.detail} for it in d.items], "overall": d.overall},
        ensure_ascii=False,
    )


def description_from_json(text: str) -> SemanticDescription:
    try:
        obj = json.loads(text)
        items = [(str(e["name"]), str(e["detail"])) for e in obj["items"]]
        overall = str(obj["overall"])
    except (json.JSONDecodeError, KeyError, TypeError) as e:
        raise MalformedPayload(f"bad description record: {e}") from e
    return make_description(items, overall)


class FixtureDescriber:
    """Deterministic describer backed by a content-hash keyed fixtures file."""

    def __init__(self, fixtures_path: str | Path):
        self.path = Path(fixtures_path)
        self.table: dict[str, SemanticDescription] = {}
        for lineno, line in enumerate(self.path.read_text(encoding="utf-8").splitlines(), 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "\t" not in line:
                raise MalformedPayload(f"{self.path}:{lineno}: expected 'hash TAB json'")
            key, payload = line.split("\t", 1)
            self.table[key.strip().lower()] = description_from_json(payload)

    def describe(self, img: np.ndarray) -> SemanticDescription:
        key = raster.content_hash(img)
        try:
            return self.table[key]
        except KeyError:
            raise FixtureMissing(f"no fixture entry for image hash {key[:16]}…") from None


def write_fixtures(path: str | Path, entries: dict[str, SemanticDescription]) -> None:
    lines = [f"{key}\t{description_to_json(d)}" for key, d in sorted(entries.items())]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


class GatewayDescriber:
    """Describer backed by the model gateway's /v1/describe endpoint."""

    def __init__(self, base_url: str, timeout: float = 30.0):
        self.base_url = base_url.rstrip("/")
        self.timeout = timeout

    def describe(self, img: np.ndarray) -> SemanticDescription:
        from .gateway_client import post_describe  # deferred: httpx only on gateway path

        obj = post_describe(self.base_url, img, timeout=self.timeout)
        items = [(str(e["name"]), str(e["detail"])) for e in obj.get("items", [])]
        return make_description(items, str(obj.get("overall", "")))


def describe(img: np.ndarray, provider) -> SemanticDescription:
    """Run a describer provider and validate its output."""
    raster.require_rgb01(img, "describe input")
    if not hasattr(provider, "describe"):
        raise GatewayUnavailable(f"not a describer provider: {provider!r}")
    return validate(provider.describe(img))
