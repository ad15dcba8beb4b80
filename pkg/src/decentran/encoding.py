"""Canonical binary encoding.

Every field is written in a fixed order with big-endian fixed-width integers
and ``u32`` length prefixes for variable-size data, so the same value always
produces the same bytes. Simulated times are stored as signed 64-bit
nanosecond counts.

Layout primitives::

    u8 / u32 / u64 / i64    big-endian, fixed width
    blob                    u32 length ‖ raw bytes
    text                    blob of UTF-8
    time                    i64 nanoseconds
"""

from __future__ import annotations

import struct

from .errors import DecodeError

_U8 = struct.Struct(">B")
_U32 = struct.Struct(">I")
_U64 = struct.Struct(">Q")
_I64 = struct.Struct(">q")

NS_PER_S = 1_000_000_000


def quantize_time(t: float) -> float:
    """Round a simulated time to the nanosecond grid used on the wire."""
    return round(t * NS_PER_S) / NS_PER_S


class Writer:
    __slots__ = ("_parts",)

    def __init__(self):
        self._parts: list[bytes] = []

    def u8(self, v: int) -> "Writer":
        self._parts.append(_U8.pack(v))
        return self

    def u32(self, v: int) -> "Writer":
        self._parts.append(_U32.pack(v))
        return self

    def u64(self, v: int) -> "Writer":
        self._parts.append(_U64.pack(v))
        return self

    def i64(self, v: int) -> "Writer":
        self._parts.append(_I64.pack(v))
        return self

    def time(self, t: float) -> "Writer":
        return self.i64(round(t * NS_PER_S))

    def blob(self, b: bytes) -> "Writer":
        self._parts.append(_U32.pack(len(b)))
        self._parts.append(bytes(b))
        return self

    def text(self, s: str) -> "Writer":
        return self.blob(s.encode("utf-8"))

    def raw(self, b: bytes) -> "Writer":
        self._parts.append(bytes(b))
        return self

    def getvalue(self) -> bytes:
        return b"".join(self._parts)


class Reader:
    __slots__ = ("_buf", "_pos")

    def __init__(self, data: bytes):
        self._buf = memoryview(bytes(data))
        self._pos = 0

    def _take(self, n: int) -> memoryview:
        end = self._pos + n
        if n < 0 or end > len(self._buf):
            raise DecodeError(f"truncated input at offset {self._pos}")
        chunk = self._buf[self._pos:end]
        self._pos = end
        return chunk

    def u8(self) -> int:
        return _U8.unpack(self._take(1))[0]

    def u32(self) -> int:
        return _U32.unpack(self._take(4))[0]

    def u64(self) -> int:
        return _U64.unpack(self._take(8))[0]

    def i64(self) -> int:
        return _I64.unpack(self._take(8))[0]

    def time(self) -> float:
        return self.i64() / NS_PER_S

    def blob(self) -> bytes:
        return bytes(self._take(self.u32()))

    def fixed(self, n: int) -> bytes:
        return bytes(self._take(n))

    def text(self) -> str:
        try:
            return self.blob().decode("utf-8")
        except UnicodeDecodeError as exc:
            raise DecodeError("invalid UTF-8 text field") from exc

    @property
    def remaining(self) -> int:
        return len(self._buf) - self._pos

    def end(self) -> None:
        if self._pos != len(self._buf):
            raise DecodeError(f"{len(self._buf) - self._pos} trailing bytes")
