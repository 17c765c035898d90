"""The .sgic container: header + semantics payload (+ optional grid map) + latent.

Byte-exact normative layout, all multi-byte integers big-endian:

    magic   4 bytes  "SGIC"
    version u8       (currently 1)
    width   u32      full-resolution pixels, >= 16, even
    height  u32      >= 16, even
    flags   u8       bit0 = grid-map payload present (patch-map ablation mode)
    semantics payload   u32 length + bytes
    grid map payload    u32 length + bytes   (only when flags bit0 is set)
    latent payload      u32 length + bytes

This module is the single source of truth for bits-per-pixel accounting:
bpp = 8 * total container bytes / (width * height).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

from .errors import (
    BadMagic,
    DimensionInvalid,
    FlagPayloadMismatch,
    Truncated,
    UnsupportedVersion,
)

MAGIC = b"SGIC"
VERSION = 1
FLAG_GRID_MAP = 0x01
HEADER_BYTES = 14


@dataclass(frozen=True)
class CompressedImage:
    width: int
    height: int
    semantics_payload: bytes
    latent_payload: bytes
    grid_map_payload: bytes | None = None
    version: int = VERSION

    @property
    def flags(self) -> int:
        return FLAG_GRID_MAP if self.grid_map_payload is not None else 0

    @property
    def total_bits(self) -> int:
        n = HEADER_BYTES + 4 + len(self.semantics_payload) + 4 + len(self.latent_payload)
        if self.grid_map_payload is not None:
            n += 4 + len(self.grid_map_payload)
        return 8 * n


def _check_dims(width: int, height: int) -> None:
    for name, v in (("width", width), ("height", height)):
        if not isinstance(v, int) or v < 16 or v % 2 != 0:
            raise DimensionInvalid(f"{name} must be an even integer >= 16, got {v!r}")
    if width > 0xFFFFFFFF or height > 0xFFFFFFFF:
        raise DimensionInvalid("dimensions exceed u32")


def pack(
    width: int,
    height: int,
    semantics: bytes,
    latent: bytes,
    grid_map: bytes | None = None,
) -> bytes:
    _check_dims(width, height)
    flags = FLAG_GRID_MAP if grid_map is not None else 0
    buf = bytearray()
    buf += MAGIC
    buf += struct.pack(">BIIB", VERSION, width, height, flags)
    for payload in (semantics, grid_map, latent):
        if payload is None:
            continue
        buf += struct.pack(">I", len(payload))
        buf += payload
    return bytes(buf)


def unpack(data: bytes) -> CompressedImage:
    if len(data) < 4 or data[:4] != MAGIC:
        raise BadMagic(f"not an SGIC stream (first bytes {data[:4]!r})")
    if len(data) < HEADER_BYTES:
        raise Truncated(f"header needs {HEADER_BYTES} bytes, got {len(data)}")
    version, width, height, flags = struct.unpack(">BIIB", data[4:HEADER_BYTES])
    if version != VERSION:
        raise UnsupportedVersion(f"container version {version}, expected {VERSION}")
    _check_dims(width, height)

    pos = HEADER_BYTES
    want_grid = bool(flags & FLAG_GRID_MAP)
    payload_names = ["semantics"] + (["grid map"] if want_grid else []) + ["latent"]
    payloads = []
    for name in payload_names:
        if pos == len(data):
            # stream ends cleanly at a payload boundary: flags promised more
            raise FlagPayloadMismatch(f"flags declare a {name} payload but the stream ends")
        if pos + 4 > len(data):
            raise Truncated(f"{name} payload length prefix truncated")
        (n,) = struct.unpack(">I", data[pos : pos + 4])
        pos += 4
        if pos + n > len(data):
            raise Truncated(f"{name} payload truncated ({len(data) - pos} of {n} bytes)")
        payloads.append(data[pos : pos + n])
        pos += n
    if pos != len(data):
        raise FlagPayloadMismatch(f"{len(data) - pos} bytes beyond the payloads declared by flags")

    if want_grid:
        sem, grid, latent = payloads
    else:
        sem, latent = payloads
        grid = None
    return CompressedImage(
        width=width,
        height=height,
        semantics_payload=sem,
        latent_payload=latent,
        grid_map_payload=grid,
        version=version,
    )


def bpp(c: CompressedImage) -> float:
    return c.total_bits / (c.width * c.height)
