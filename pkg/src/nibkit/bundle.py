"""Bit-exact binary container for named float32 tensors.

Layout (all integers little-endian):

    magic   4 bytes  "NIBT"
    version u32      = 1
    count   u32
    entry*  name_len u32, name bytes (UTF-8),
            dtype u8 (0 = float32), rank u8, dims u32 * rank,
            payload: 4 * prod(dims) bytes of little-endian f32, row-major

Trailing bytes after the last entry are a format error.
"""

from __future__ import annotations

import struct
from typing import Iterable, Mapping

import numpy as np

from .errors import (
    BadMagicError,
    BundleError,
    DuplicateNameError,
    TrailingBytesError,
    TruncatedPayloadError,
    UnsupportedDtypeError,
    VersionMismatchError,
)

MAGIC = b"NIBT"
VERSION = 1
DTYPE_F32 = 0


def write_bundle(entries: Mapping[str, np.ndarray] | Iterable[tuple[str, np.ndarray]]) -> bytes:
    """Serialize name -> array pairs; arrays are stored as float32."""
    items = list(entries.items()) if isinstance(entries, Mapping) else list(entries)
    seen = set()
    parts = [MAGIC, struct.pack("<II", VERSION, len(items))]
    for name, arr in items:
        if name in seen:
            raise DuplicateNameError(f"duplicate bundle entry {name!r}")
        seen.add(name)
        raw_name = name.encode("utf-8")
        arr = np.asarray(arr, dtype="<f4")
        if arr.ndim and not arr.flags.c_contiguous:
            arr = np.ascontiguousarray(arr)
        parts.append(struct.pack("<I", len(raw_name)))
        parts.append(raw_name)
        parts.append(struct.pack("<BB", DTYPE_F32, arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.tobytes(order="C"))
    return b"".join(parts)


class _Cursor:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise TruncatedPayloadError(
                f"needed {n} bytes at offset {self.pos}, only {len(self.data) - self.pos} left"
            )
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def u8(self) -> int:
        return self.take(1)[0]


def read_bundle(data: bytes) -> dict[str, np.ndarray]:
    """Parse bundle bytes into name -> float32 array, preserving entry order."""
    cur = _Cursor(data)
    if cur.take(4) != MAGIC:
        raise BadMagicError("not a tensor bundle (bad magic)")
    version = cur.u32()
    if version != VERSION:
        raise VersionMismatchError(f"bundle version {version}, expected {VERSION}")
    count = cur.u32()
    out: dict[str, np.ndarray] = {}
    for _ in range(count):
        name_len = cur.u32()
        try:
            name = cur.take(name_len).decode("utf-8")
        except UnicodeDecodeError as e:
            raise BundleError(f"entry name is not valid UTF-8: {e}") from e
        if name in out:
            raise DuplicateNameError(f"duplicate bundle entry {name!r}")
        dtype = cur.u8()
        if dtype != DTYPE_F32:
            raise UnsupportedDtypeError(f"dtype code {dtype} not supported (only 0 = f32)")
        rank = cur.u8()
        dims = tuple(cur.u32() for _ in range(rank))
        n_elem = 1
        for d in dims:
            n_elem *= d
        payload = cur.take(4 * n_elem)
        out[name] = np.frombuffer(payload, dtype="<f4").reshape(dims).copy()
    if cur.pos != len(data):
        raise TrailingBytesError(f"{len(data) - cur.pos} trailing bytes after last entry")
    return out


def write_bundle_file(path, entries) -> None:
    with open(path, "wb") as f:
        f.write(write_bundle(entries))


def read_bundle_file(path) -> dict[str, np.ndarray]:
    with open(path, "rb") as f:
        return read_bundle(f.read())
