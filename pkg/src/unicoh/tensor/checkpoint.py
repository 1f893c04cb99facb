"""Single-file parameter checkpoints.

Layout::

    magic  b"UNICOHCK"          8 bytes
    header length               uint64, little endian
    header                      UTF-8 JSON, sorted keys
    tensor data                 concatenated float64 little endian, row major

The header holds the format version, a ``tensors`` table of
``{name, shape, offset}`` entries (offset in bytes into the data section) and
arbitrary JSON ``meta`` (training config echo, vocabulary, provenance).
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Any, Mapping

import numpy as np

MAGIC = b"UNICOHCK"
VERSION = 1


class CheckpointError(ValueError):
    pass


def dumps(arrays: Mapping[str, np.ndarray], meta: Mapping[str, Any] | None = None) -> bytes:
    table = []
    blobs = []
    offset = 0
    for name in sorted(arrays):
        arr = np.asarray(arrays[name], dtype="<f8")
        blob = arr.tobytes(order="C")
        table.append({"name": name, "shape": list(arr.shape), "offset": offset})
        blobs.append(blob)
        offset += len(blob)
    header = {"version": VERSION, "tensors": table, "meta": dict(meta or {})}
    raw = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return MAGIC + struct.pack("<Q", len(raw)) + raw + b"".join(blobs)


def loads(buf: bytes) -> tuple[dict[str, np.ndarray], dict[str, Any]]:
    if buf[: len(MAGIC)] != MAGIC:
        raise CheckpointError("not a unicoh checkpoint (bad magic)")
    (hlen,) = struct.unpack("<Q", buf[8:16])
    header = json.loads(buf[16 : 16 + hlen].decode("utf-8"))
    if header.get("version") != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {header.get('version')}")
    data = memoryview(buf)[16 + hlen :]
    arrays = {}
    for entry in header["tensors"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape, dtype=np.int64))
        start = entry["offset"]
        end = start + 8 * count
        if end > len(data):
            raise CheckpointError(f"tensor {entry['name']!r} runs past end of file")
        arrays[entry["name"]] = (
            np.frombuffer(data[start:end], dtype="<f8").astype(np.float64).reshape(shape)
        )
    return arrays, header["meta"]


def save(path: str | Path, arrays: Mapping[str, np.ndarray], meta: Mapping[str, Any] | None = None) -> None:
    Path(path).write_bytes(dumps(arrays, meta))


def load(path: str | Path) -> tuple[dict[str, np.ndarray], dict[str, Any]]:
    return loads(Path(path).read_bytes())
