"""Canonical byte encoding primitives.

Fixed-width little-endian integers, u32-length-prefixed UTF-8 strings, and no
floating point: coordinates travel as integer millimetres, powers as integer
millidB.
"""
from __future__ import annotations

import struct


class DecodeError(ValueError):
    pass


def u8(v: int) -> bytes:
    return struct.pack("<B", v)


def u32(v: int) -> bytes:
    return struct.pack("<I", v)


def u64(v: int) -> bytes:
    if v < 0 or v >= 1 << 64:
        raise OverflowError(f"{v} does not fit in u64")
    return struct.pack("<Q", v)


def i64(v: int) -> bytes:
    return struct.pack("<q", v)


def text(s: str) -> bytes:
    b = s.encode("utf-8")
    return u32(len(b)) + b


def blob(b: bytes) -> bytes:
    return u32(len(b)) + b


def milli(v: float) -> int:
    return round(v * 1000)


class Reader:
    def __init__(self, data: bytes, pos: int = 0, end: int | None = None):
        self.data = data
        self.pos = pos
        self.end = len(data) if end is None else end

    def _take(self, n: int) -> bytes:
        if n < 0 or self.pos + n > self.end:
            raise DecodeError(f"truncated input at offset {self.pos}")
        b = self.data[self.pos:self.pos + n]
        self.pos += n
        return b

    def u8(self) -> int:
        return self._take(1)[0]

    def u32(self) -> int:
        return struct.unpack("<I", self._take(4))[0]

    def u64(self) -> int:
        return struct.unpack("<Q", self._take(8))[0]

    def i64(self) -> int:
        return struct.unpack("<q", self._take(8))[0]

    def raw(self, n: int) -> bytes:
        return self._take(n)

    def text(self) -> str:
        try:
            return self._take(self.u32()).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise DecodeError(str(exc)) from None

    def blob(self) -> bytes:
        return self._take(self.u32())

    def done(self) -> bool:
        return self.pos == self.end

    def expect_done(self) -> None:
        if self.pos != self.end:
            raise DecodeError(f"{self.end - self.pos} trailing bytes at offset {self.pos}")
