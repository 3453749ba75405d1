"""Flat binary container of named float64 tensors.

Layout (all integers unsigned 64-bit little-endian)::

    magic  b"CUETRAJ\\0"
    version
    tensor count
    per tensor: name length, UTF-8 name, rank, dims..., float64 LE values
"""

from __future__ import annotations

import struct
from pathlib import Path
from typing import BinaryIO, Mapping

import numpy as np

from ..errors import ValidationError

MAGIC = b"CUETRAJ\0"
FORMAT_VERSION = 1
_U64 = struct.Struct("<Q")


def _write_u64(f: BinaryIO, n: int) -> None:
    f.write(_U64.pack(n))


def _read_u64(f: BinaryIO) -> int:
    raw = f.read(8)
    if len(raw) != 8:
        raise ValidationError("truncated checkpoint")
    return _U64.unpack(raw)[0]


def save_tensors(path: str | Path, tensors: Mapping[str, np.ndarray]) -> None:
    with open(path, "wb") as f:
        f.write(MAGIC)
        _write_u64(f, FORMAT_VERSION)
        _write_u64(f, len(tensors))
        for name, arr in tensors.items():
            arr = np.asarray(arr, dtype="<f8")
            raw = name.encode("utf-8")
            _write_u64(f, len(raw))
            f.write(raw)
            _write_u64(f, arr.ndim)
            for n in arr.shape:
                _write_u64(f, n)
            f.write(arr.tobytes(order="C"))


def load_tensors(path: str | Path) -> dict[str, np.ndarray]:
    out: dict[str, np.ndarray] = {}
    with open(path, "rb") as f:
        if f.read(len(MAGIC)) != MAGIC:
            raise ValidationError(f"{path} is not a checkpoint file")
        version = _read_u64(f)
        if version != FORMAT_VERSION:
            raise ValidationError(f"unsupported checkpoint version {version}")
        for _ in range(_read_u64(f)):
            name = f.read(_read_u64(f)).decode("utf-8")
            shape = tuple(_read_u64(f) for _ in range(_read_u64(f)))
            count = int(np.prod(shape, dtype=np.int64))
            raw = f.read(8 * count)
            if len(raw) != 8 * count:
                raise ValidationError(f"truncated values for tensor {name!r}")
            out[name] = np.frombuffer(raw, dtype="<f8").reshape(shape).astype(np.float64)
        if f.read(1):
            raise ValidationError("trailing bytes after last tensor")
    return out
