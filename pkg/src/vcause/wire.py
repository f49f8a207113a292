"""Canonical byte encoding shared by every wire format.

All integers are big-endian and fixed width; variable-length fields are
length-prefixed. Encodings here are injective by construction, which the
hash preimages built on top of them rely on.
"""

from __future__ import annotations


class WireError(ValueError):
    """Malformed or truncated wire data."""


def u8(v: int) -> bytes:
    return v.to_bytes(1, "big")


def u16(v: int) -> bytes:
    return v.to_bytes(2, "big")


def u32(v: int) -> bytes:
    return v.to_bytes(4, "big")


def u64(v: int) -> bytes:
    return v.to_bytes(8, "big")


def u128(v: int) -> bytes:
    return v.to_bytes(16, "big")


def bytes_lp(b: bytes) -> bytes:
    """Length-prefixed bytes: u32 length followed by the raw bytes."""
    return u32(len(b)) + b


def str_lp(s: str) -> bytes:
    return bytes_lp(s.encode("utf-8"))


class Reader:
    """Sequential decoder over one wire buffer.

    Every read raises WireError on truncation; finish() raises if trailing
    bytes remain, so round-trip tests catch both under- and over-reads.
    """

    def __init__(self, data: bytes):
        self._data = data
        self._pos = 0

    def take(self, n: int) -> bytes:
        if n < 0 or self._pos + n > len(self._data):
            raise WireError(f"truncated: need {n} bytes at offset {self._pos}")
        out = self._data[self._pos : self._pos + n]
        self._pos += n
        return out

    def u8(self) -> int:
        return int.from_bytes(self.take(1), "big")

    def u16(self) -> int:
        return int.from_bytes(self.take(2), "big")

    def u32(self) -> int:
        return int.from_bytes(self.take(4), "big")

    def u64(self) -> int:
        return int.from_bytes(self.take(8), "big")

    def u128(self) -> int:
        return int.from_bytes(self.take(16), "big")

    def bytes_lp(self) -> bytes:
        return self.take(self.u32())

    def str_lp(self) -> str:
        try:
            return self.bytes_lp().decode("utf-8")
        except UnicodeDecodeError as exc:
            raise WireError(f"invalid utf-8 at offset {self._pos}") from exc

    def remaining(self) -> int:
        return len(self._data) - self._pos

    def finish(self) -> None:
        if self._pos != len(self._data):
            raise WireError(f"{self.remaining()} trailing bytes")
