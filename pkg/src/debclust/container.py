"""Flat binary container of named float64 tensors.

Each record is, little-endian and back to back until end of file::

    uint32  name length in bytes
    bytes   UTF-8 name
    uint32  rank
    uint64  dims[rank]
    float64 values[prod(dims)]   (row-major)
"""

from __future__ import annotations

import os
import struct
from typing import Mapping

import numpy as np


class ContainerError(ValueError):
    pass


def dumps(tensors: Mapping[str, np.ndarray]) -> bytes:
    out = bytearray()
    for name, value in tensors.items():
        arr = np.asarray(value, dtype="<f8")
        raw = name.encode("utf-8")
        out += struct.pack("<I", len(raw)) + raw
        out += struct.pack("<I", arr.ndim)
        out += struct.pack(f"<{arr.ndim}Q", *arr.shape)
        out += arr.tobytes()
    return bytes(out)


def loads(data: bytes) -> dict[str, np.ndarray]:
    tensors: dict[str, np.ndarray] = {}
    pos = 0
    end = len(data)

    def take(n: int) -> bytes:
        nonlocal pos
        if pos + n > end:
            raise ContainerError(f"truncated record at byte {pos}")
        chunk = data[pos:pos + n]
        pos += n
        return chunk

    while pos < end:
        (name_len,) = struct.unpack("<I", take(4))
        name = take(name_len).decode("utf-8")
        (rank,) = struct.unpack("<I", take(4))
        dims = struct.unpack(f"<{rank}Q", take(8 * rank))
        count = int(np.prod(dims, dtype=np.int64)) if rank else 1
        arr = np.frombuffer(take(8 * count), dtype="<f8").reshape(dims).astype(np.float64)
        if name in tensors:
            raise ContainerError(f"duplicate tensor name {name!r}")
        tensors[name] = arr
    return tensors


def save(path: str | os.PathLike, tensors: Mapping[str, np.ndarray]) -> None:
    with open(path, "wb") as fh:
        fh.write(dumps(tensors))


def load(path: str | os.PathLike) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        return loads(fh.read())
