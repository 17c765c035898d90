"""Low-bitrate path: 2x box downsampling plus a compact 8x8 DCT transform codec.

The latent payload layout (all integers big-endian):

    magic    4 bytes  "DCT0"
    width    u16      pre-padding image width
    height   u16      pre-padding image height
    quality  u8       1..8
    body_len u32      length of the range-coded body
    body     bytes    entropy-coded channel streams (R, G, B sequential)
    crc32    u32      CRC-32 of body, decode gate against corruption

Per channel: samples are centered to [-0.5, 0.5], reflect-padded to block
multiples, transformed by an orthonormal 8x8 DCT-II, uniformly quantized
(DC step fixed across qualities so flat areas always reconstruct within
1e-3; AC steps scale with quality), zigzag-scanned and coded as DC deltas
plus (run, level) pairs through adaptive range-coder models.

Determinism contract: encoding the same image twice is byte-identical; the
quantized integers are the normative content and survive any platform's
float rounding with wide margin at these step sizes.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass

import numpy as np

from .errors import DimensionInvalid, MalformedPayload
from .rangecoder import AdaptiveModel, RangeDecoder, RangeEncoder

LATENT_MAGIC = b"DCT0"
BLOCK = 8

# DC quantizer step is quality-independent: constant-image error stays
# below step/(2*8) ~ 5e-4 regardless of the rate point.
DC_STEP = 1.0 / 128.0

# AC base steps grow with spatial frequency; quality q scales them by
# 2 ** (0.85 * (8 - q)), so q=1 is ~62x coarser than q=8.
_U, _V = np.meshgrid(np.arange(BLOCK), np.arange(BLOCK), indexing="ij")
AC_BASE = (1.0 + 0.8 * (_U + _V)) / 128.0
_AC_EXP = 0.85

_ESCAPE_DC = 31      # dc model: folded values 0..30 direct, 31 = escape + u16
_ESCAPE_LEV = 30     # level model: magnitudes 1..30 direct, symbol 30 = escape + u16
_EOB = 63            # run model: runs 0..62, symbol 63 = end of block


@dataclass(frozen=True)
class InitialCodecConfig:
    quality: int = 6
    block: int = BLOCK

    def __post_init__(self):
        if not 1 <= self.quality <= 8:
            raise DimensionInvalid(f"quality {self.quality} outside 1..8")
        if self.block != BLOCK:
            raise DimensionInvalid("only 8x8 transform blocks are supported")


def _dct_matrix() -> np.ndarray:
    n = BLOCK
    c = np.zeros((n, n))
    for u in range(n):
        for x in range(n):
            c[u, x] = np.cos((2 * x + 1) * u * np.pi / (2 * n))
    c *= np.sqrt(2.0 / n)
    c[0, :] = np.sqrt(1.0 / n)
    return c


_DCT = _dct_matrix()

_ZIGZAG = np.array(
    sorted(range(64), key=lambda k: (k // 8 + k % 8, (k % 8 if (k // 8 + k % 8) % 2 else k // 8)))
)


def _step_table(quality: int) -> np.ndarray:
    steps = AC_BASE * (2.0 ** (_AC_EXP * (8 - quality)))
    steps[0, 0] = DC_STEP
    return steps


def downsample_half(img: np.ndarray) -> np.ndarray:
    """Half-resolution image; each output pixel is the mean of a 2x2 block."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 3 or img.shape[2] != 3:
        raise DimensionInvalid(f"expected (H, W, 3), got {img.shape}")
    h, w = img.shape[:2]
    if h % 2 or w % 2 or h < 2 or w < 2:
        raise DimensionInvalid(f"downsample_half needs even dimensions, got {w}x{h}")
    return img.reshape(h // 2, 2, w // 2, 2, 3).mean(axis=(1, 3))


def _pad_reflect(plane: np.ndarray) -> np.ndarray:
    h, w = plane.shape
    ph = (-h) % BLOCK
    pw = (-w) % BLOCK
    if ph == 0 and pw == 0:
        return plane
    return np.pad(plane, ((0, ph), (0, pw)), mode="reflect")


def _blocks_forward(plane: np.ndarray) -> np.ndarray:
    """(H, W) -> (nblocks, 8, 8) DCT coefficients, row-major block order."""
    h, w = plane.shape
    b = plane.reshape(h // BLOCK, BLOCK, w // BLOCK, BLOCK).transpose(0, 2, 1, 3)
    b = b.reshape(-1, BLOCK, BLOCK)
    return np.einsum("ux,nxy,vy->nuv", _DCT, b, _DCT)


def _blocks_inverse(coefs: np.ndarray, h: int, w: int) -> np.ndarray:
    b = np.einsum("ux,nuv,vy->nxy", _DCT, coefs, _DCT)
    nby = h // BLOCK
    nbx = w // BLOCK
    return b.reshape(nby, nbx, BLOCK, BLOCK).transpose(0, 2, 1, 3).reshape(h, w)


def _fold_signed(v: int) -> int:
    # 0, -1, 1, -2, 2, ... -> 0, 1, 2, 3, 4, ...
    return 2 * v if v >= 0 else -2 * v - 1


def _unfold_signed(u: int) -> int:
    return u // 2 if u % 2 == 0 else -(u + 1) // 2


class _Models:
    def __init__(self):
        self.dc = AdaptiveModel(32)
        self.run = AdaptiveModel(64)
        self.lev = AdaptiveModel(31)
        self.sign = AdaptiveModel(2)


def _encode_plane(enc: RangeEncoder, models: _Models, quant: np.ndarray) -> None:
    prev_dc = 0
    for block in quant:
        zz = block.reshape(64)[_ZIGZAG]
        delta = int(zz[0]) - prev_dc
        prev_dc = int(zz[0])
        folded = _fold_signed(delta)
        if folded < _ESCAPE_DC:
            enc.encode_symbol(models.dc, folded)
        else:
            enc.encode_symbol(models.dc, _ESCAPE_DC)
            if folded > 0xFFFF:
                raise MalformedPayload("DC delta exceeds escape range")
            enc.encode_byte(folded >> 8)
            enc.encode_byte(folded & 0xFF)
        run = 0
        for k in range(1, 64):
            v = int(zz[k])
            if v == 0:
                run += 1
                continue
            enc.encode_symbol(models.run, run)
            run = 0
            mag = abs(v)
            if mag <= _ESCAPE_LEV:
                enc.encode_symbol(models.lev, mag - 1)
            else:
                enc.encode_symbol(models.lev, _ESCAPE_LEV)
                if mag > 0xFFFF:
                    raise MalformedPayload("AC magnitude exceeds escape range")
                enc.encode_byte(mag >> 8)
                enc.encode_byte(mag & 0xFF)
            enc.encode_symbol(models.sign, 1 if v < 0 else 0)
        enc.encode_symbol(models.run, _EOB)


def _decode_plane(dec: RangeDecoder, models: _Models, nblocks: int) -> np.ndarray:
    quant = np.zeros((nblocks, 64), dtype=np.int64)
    inv_zz = np.argsort(_ZIGZAG)
    prev_dc = 0
    for n in range(nblocks):
        zz = np.zeros(64, dtype=np.int64)
        folded = dec.decode_symbol(models.dc)
        if folded == _ESCAPE_DC:
            folded = (dec.decode_byte() << 8) | dec.decode_byte()
        prev_dc += _unfold_signed(folded)
        zz[0] = prev_dc
        k = 1
        while True:
            run = dec.decode_symbol(models.run)
            if run == _EOB:
                break
            k += run
            if k > 63:
                raise MalformedPayload("AC run overflows block")
            mag = dec.decode_symbol(models.lev) + 1
            if mag == _ESCAPE_LEV + 1:
                mag = (dec.decode_byte() << 8) | dec.decode_byte()
                if mag == 0:
                    raise MalformedPayload("escaped AC magnitude of zero")
            sign = dec.decode_symbol(models.sign)
            zz[k] = -mag if sign else mag
            k += 1
            if k > 64:
                raise MalformedPayload("AC coefficients overflow block")
        quant[n] = zz[inv_zz]
    return quant.reshape(nblocks, BLOCK, BLOCK)


def encode_initial(img: np.ndarray, cfg: InitialCodecConfig) -> bytes:
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 3 or img.shape[2] != 3:
        raise DimensionInvalid(f"expected (H, W, 3), got {img.shape}")
    h, w = img.shape[:2]
    if h < 1 or w < 1 or h > 0xFFFF or w > 0xFFFF:
        raise DimensionInvalid(f"image dimensions {w}x{h} outside u16 range")
    steps = _step_table(cfg.quality)
    enc = RangeEncoder()
    models = _Models()
    for ch in range(3):
        plane = _pad_reflect(img[:, :, ch] - 0.5)
        coefs = _blocks_forward(plane)
        quant = np.round(coefs / steps).astype(np.int64)
        _encode_plane(enc, models, quant)
    body = enc.finish()
    head = LATENT_MAGIC + struct.pack(">HHBI", w, h, cfg.quality, len(body))
    return head + body + struct.pack(">I", zlib.crc32(body))


def decode_initial(data: bytes) -> np.ndarray:
    if len(data) < 13:
        raise MalformedPayload(f"latent payload too short ({len(data)} bytes)")
    if data[:4] != LATENT_MAGIC:
        raise MalformedPayload(f"bad latent magic {data[:4]!r}")
    w, h, quality, body_len = struct.unpack(">HHBI", data[4:13])
    if not 1 <= quality <= 8:
        raise MalformedPayload(f"latent quality byte {quality} outside 1..8")
    if len(data) != 13 + body_len + 4:
        raise MalformedPayload(
            f"latent payload length mismatch: header says {13 + body_len + 4}, got {len(data)}"
        )
    body = data[13 : 13 + body_len]
    (crc,) = struct.unpack(">I", data[13 + body_len :])
    if zlib.crc32(body) != crc:
        raise MalformedPayload("latent payload CRC mismatch")

    ph = h + ((-h) % BLOCK)
    pw = w + ((-w) % BLOCK)
    nblocks = (ph // BLOCK) * (pw // BLOCK)
    steps = _step_table(quality)
    dec = RangeDecoder(body)
    models = _Models()
    out = np.empty((h, w, 3), dtype=np.float64)
    try:
        for ch in range(3):
            quant = _decode_plane(dec, models, nblocks)
            plane = _blocks_inverse(quant * steps, ph, pw)
            out[:, :, ch] = plane[:h, :w] + 0.5
    except MalformedPayload:
        raise
    except Exception as e:  # rangecoder Truncated and friends
        raise MalformedPayload(f"latent body undecodable: {e}") from e
    return np.clip(out, 0.0, 1.0)
