"""Canonical byte encoding for every hashed or signed structure.

All integers are big-endian and fixed width. Variable-length byte strings
are prefixed with a u32 length. Timestamps are encoded as u64 microseconds.
See FORMATS.md for the per-structure layouts.
"""

from __future__ import annotations

import struct

U8 = struct.Struct(">B")
U32 = struct.Struct(">I")
U64 = struct.Struct(">Q")


def u8(n: int) -> bytes:
    return U8.pack(n)


def u32(n: int) -> bytes:
    return U32.pack(n)


def u64(n: int) -> bytes:
    return U64.pack(n)


def u128(n: int) -> bytes:
    if n < 0 or n >= 1 << 128:
        raise ValueError(f"u128 out of range: {n}")
    return n.to_bytes(16, "big")


def varbytes(b: bytes) -> bytes:
    return U32.pack(len(b)) + b


def timestamp(t: float) -> bytes:
    return u64(int(round(t * 1_000_000)))


class Reader:
    """Cursor over a canonical byte string; raises ValueError on underflow."""

    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if n < 0 or self.pos + n > len(self.data):
            raise ValueError("truncated encoding")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def u8(self) -> int:
        return self.take(1)[0]

    def u32(self) -> int:
        return U32.unpack(self.take(4))[0]

    def u64(self) -> int:
        return U64.unpack(self.take(8))[0]

    def u128(self) -> int:
        return int.from_bytes(self.take(16), "big")

    def varbytes(self) -> bytes:
        return self.take(self.u32())

    def done(self) -> bool:
        return self.pos == len(self.data)
