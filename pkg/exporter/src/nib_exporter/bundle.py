"""Reader/writer for the .nibt tensor container, implemented from the format
description alone (magic "NIBT", version u32 = 1, count u32, then per entry
a u32-length UTF-8 name, dtype u8 (0 = f32), rank u8, u32 dims and row-major
little-endian float32 payload; no trailing bytes)."""

from __future__ import annotations

import struct

import numpy as np


class BundleFormatError(ValueError):
    pass


MAGIC = b"NIBT"
VERSION = 1


def dump(entries: dict[str, np.ndarray]) -> bytes:
    out = bytearray()
    out += MAGIC
    out += struct.pack("<II", VERSION, len(entries))
    for name, arr in entries.items():
        arr = np.ascontiguousarray(np.asarray(arr, dtype="<f4")) if np.ndim(arr) else np.asarray(arr, dtype="<f4")
        encoded = name.encode("utf-8")
        out += struct.pack("<I", len(encoded))
        out += encoded
        out += struct.pack("<BB", 0, arr.ndim)
        for dim in arr.shape:
            out += struct.pack("<I", dim)
        out += arr.tobytes(order="C")
    return bytes(out)


def load(data: bytes) -> dict[str, np.ndarray]:
    pos = 0

    def take(n):
        nonlocal pos
        if pos + n > len(data):
            raise BundleFormatError(f"truncated at offset {pos}")
        chunk = data[pos : pos + n]
        pos += n
        return chunk

    if take(4) != MAGIC:
        raise BundleFormatError("bad magic")
    version, count = struct.unpack("<II", take(8))
    if version != VERSION:
        raise BundleFormatError(f"unsupported version {version}")
    entries: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<I", take(4))
        name = take(name_len).decode("utf-8")
        if name in entries:
            raise BundleFormatError(f"duplicate entry {name!r}")
        dtype, rank = struct.unpack("<BB", take(2))
        if dtype != 0:
            raise BundleFormatError(f"unsupported dtype code {dtype}")
        shape = tuple(struct.unpack("<I", take(4))[0] for _ in range(rank))
        n = int(np.prod(shape, dtype=np.int64)) if shape else 1
        entries[name] = np.frombuffer(take(4 * n), dtype="<f4").reshape(shape).copy()
    if pos != len(data):
        raise BundleFormatError(f"{len(data) - pos} trailing bytes")
    return entries


def dump_file(path, entries) -> None:
    with open(path, "wb") as f:
        f.write(dump(entries))


def load_file(path) -> dict[str, np.ndarray]:
    with open(path, "rb") as f:
        return load(f.read())
