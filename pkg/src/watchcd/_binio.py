"""Versioned binary container: JSON header followed by raw little-endian arrays."""

from __future__ import annotations

import json
import os
import struct
from pathlib import Path

import numpy as np

from .errors import FormatError

_HEAD = struct.Struct("<4sHI")


def write_container(path: str | os.PathLike, magic: bytes, version: int, header: dict,
                    arrays: dict[str, np.ndarray]) -> None:
    specs = []
    blobs = []
    for name, arr in arrays.items():
        arr = np.asarray(arr)
        dtype = arr.dtype.newbyteorder("<")
        specs.append({"name": name, "dtype": dtype.str, "shape": list(arr.shape)})
        blobs.append(np.ascontiguousarray(arr, dtype=dtype).tobytes())
    head = json.dumps({**header, "arrays": specs}, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_HEAD.pack(magic, version, len(head)))
        fh.write(head)
        for blob in blobs:
            fh.write(blob)


def read_container(path: str | os.PathLike, magic: bytes, version: int) -> tuple[dict, dict[str, np.ndarray]]:
    path = Path(path)
    if not path.exists():
        raise FormatError(f"file not found: {path}")
    raw = path.read_bytes()
    if len(raw) < _HEAD.size:
        raise FormatError(f"{path}: truncated header")
    got_magic, got_version, nhead = _HEAD.unpack_from(raw)
    if got_magic != magic:
        raise FormatError(f"{path}: expected magic {magic!r}, found {got_magic!r}")
    if got_version != version:
        raise FormatError(f"{path}: unsupported version {got_version}")
    off = _HEAD.size
    header = json.loads(raw[off:off + nhead].decode("utf-8"))
    off += nhead
    arrays = {}
    for spec in header.pop("arrays"):
        dtype = np.dtype(spec["dtype"])
        count = int(np.prod(spec["shape"], dtype=np.int64))
        arr = np.frombuffer(raw, dtype=dtype, count=count, offset=off).reshape(spec["shape"])
        arrays[spec["name"]] = arr.astype(dtype.newbyteorder("="))
        off += count * dtype.itemsize
    if off != len(raw):
        raise FormatError(f"{path}: {len(raw) - off} trailing bytes")
    return header, arrays
