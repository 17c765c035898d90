"""Byte-oriented carry-less range coder with adaptive frequency models.

Classic Subbotin construction: 32-bit low/range registers, renormalization
one byte at a time. The decoder replays the encoder's state machine exactly,
so it consumes exactly as many bytes as the encoder produced; running out of
input mid-stream raises Truncated.

Alphabets here are small (< 100 symbols), so cumulative frequencies are
computed by linear scan, which keeps the model dead simple and deterministic.
"""

from __future__ import annotations

import numpy as np

from .errors import Truncated

_MASK = 0xFFFFFFFF
_TOP = 1 << 24
_BOT = 1 << 16

# Model tuning: totals must stay below _BOT so range // total never hits zero.
_INC = 32
_MAX_TOTAL = 1 << 15


class AdaptiveModel:
    """Order-0 adaptive frequency table over a fixed alphabet."""

    def __init__(self, nsym: int):
        if nsym < 2:
            raise ValueError("alphabet needs at least 2 symbols")
        self.freq = [1] * nsym
        self.total = nsym

    def lookup(self, sym: int) -> tuple[int, int, int]:
        cum = 0
        for s in range(sym):
            cum += self.freq[s]
        return cum, self.freq[sym], self.total

    def find(self, target: int) -> tuple[int, int, int, int]:
        """Symbol whose cumulative interval contains target."""
        cum = 0
        for s, f in enumerate(self.freq):
            if target < cum + f:
                return s, cum, f, self.total
            cum += f
        raise Truncated("range decoder target outside model total")

    def update(self, sym: int) -> None:
        self.freq[sym] += _INC
        self.total += _INC
        if self.total > _MAX_TOTAL:
            total = 0
            for s in range(len(self.freq)):
                self.freq[s] = (self.freq[s] + 1) >> 1
                total += self.freq[s]
            self.total = total


class RangeEncoder:
    def __init__(self):
        self.low = 0
        self.range = _MASK
        self.out = bytearray()

    def _renorm(self) -> None:
        while True:
            if (self.low ^ (self.low + self.range)) < _TOP:
                pass
            elif self.range < _BOT:
                self.range = (-self.low) & (_BOT - 1)
            else:
                break
            self.out.append((self.low >> 24) & 0xFF)
            self.low = (self.low << 8) & _MASK
            self.range = (self.range << 8) & _MASK

    def encode(self, cum: int, freq: int, total: int) -> None:
        r = self.range // total
        self.low = (self.low + r * cum) & _MASK
        self.range = r * freq if cum + freq < total else self.range - r * cum
        self._renorm()

    def encode_symbol(self, model: AdaptiveModel, sym: int) -> None:
        cum, freq, total = model.lookup(sym)
        self.encode(cum, freq, total)
        model.update(sym)

    def encode_byte(self, b: int) -> None:
        """Uniform 256-ary symbol; costs exactly 8 bits asymptotically."""
        self.encode(b & 0xFF, 1, 256)

    def finish(self) -> bytes:
        for _ in range(4):
            self.out.append((self.low >> 24) & 0xFF)
            self.low = (self.low << 8) & _MASK
        return bytes(self.out)


class RangeDecoder:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0
        self.low = 0
        self.range = _MASK
        self.code = 0
        for _ in range(4):
            self.code = ((self.code << 8) | self._next()) & _MASK

    def _next(self) -> int:
        if self.pos >= len(self.data):
            raise Truncated("range-coded stream exhausted")
        b = self.data[self.pos]
        self.pos += 1
        return b

    def _renorm(self) -> None:
        while True:
            if (self.low ^ (self.low + self.range)) < _TOP:
                pass
            elif self.range < _BOT:
                self.range = (-self.low) & (_BOT - 1)
            else:
                break
            self.code = ((self.code << 8) | self._next()) & _MASK
            self.low = (self.low << 8) & _MASK
            self.range = (self.range << 8) & _MASK

    def _target(self, total: int) -> int:
        r = self.range // total
        t = ((self.code - self.low) & _MASK) // r
        return min(t, total - 1)

    def _update(self, cum: int, freq: int, total: int) -> None:
        r = self.range // total
        self.low = (self.low + r * cum) & _MASK
        self.range = r * freq if cum + freq < total else self.range - r * cum
        self._renorm()

    def decode_symbol(self, model: AdaptiveModel) -> int:
        sym, cum, freq, total = model.find(self._target(model.total))
        self._update(cum, freq, total)
        model.update(sym)
        return sym

    def decode_byte(self) -> int:
        b = self._target(256)
        self._update(b, 1, 256)
        return b


def roundtrip_check(symbols: list[int], nsym: int) -> bool:
    """Self-test helper: encode + decode a symbol list through fresh models."""
    enc = RangeEncoder()
    m = AdaptiveModel(nsym)
    for s in symbols:
        enc.encode_symbol(m, s)
    blob = enc.finish()
    dec = RangeDecoder(blob)
    m2 = AdaptiveModel(nsym)
    out = [dec.decode_symbol(m2) for _ in symbols]
    return out == symbols


if __name__ == "__main__":
    rng = np.random.default_rng(0)
    for trial in range(50):
        n = int(rng.integers(1, 5000))
        k = int(rng.integers(2, 100))
        syms = rng.integers(0, k, size=n).tolist()
        assert roundtrip_check(syms, k), f"trial {trial} failed"
    print("range coder round-trip ok")
