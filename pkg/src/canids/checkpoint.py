"""Self-describing checkpoint container: JSON header plus raw tensor bytes.

Layout (version 1):

    line 1: ``canids-tensors v1``
    line 2: decimal byte length of the JSON header
    header: UTF-8 JSON ``{"meta": {...}, "tensors": [{"name", "shape"}, ...]}``
    data:   concatenated row-major little-endian float64 blocks, in
            header order

The format is deliberately timestamp-free so identical contents produce
identical bytes, and JSON floats round-trip exactly (shortest-repr).
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .errors import DataError

_MAGIC = b"canids-tensors v1\n"


def save_tensors(path, meta: dict, tensors: dict[str, np.ndarray]) -> None:
    entries = []
    blobs = []
    for name, arr in tensors.items():
        arr = np.asarray(arr, dtype=np.float64)
        entries.append({"name": name, "shape": list(arr.shape)})
        blobs.append(np.ascontiguousarray(arr).astype("<f8").tobytes())
    header = json.dumps({"meta": meta, "tensors": entries}, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(str(len(header)).encode("ascii") + b"\n")
        fh.write(header)
        for blob in blobs:
            fh.write(blob)


def load_tensors(path) -> tuple[dict, dict[str, np.ndarray]]:
    raw = Path(path).read_bytes()
    if not raw.startswith(_MAGIC):
        raise DataError(f"{path}: not a canids tensor container")
    rest = raw[len(_MAGIC):]
    nl = rest.index(b"\n")
    header_len = int(rest[:nl])
    header = json.loads(rest[nl + 1 : nl + 1 + header_len].decode("utf-8"))
    data = rest[nl + 1 + header_len :]
    tensors: dict[str, np.ndarray] = {}
    offset = 0
    for entry in header["tensors"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        block = np.frombuffer(data, dtype="<f8", count=count, offset=offset)
        offset += count * 8
        tensors[entry["name"]] = block.reshape(shape).astype(np.float64)
    if offset != len(data):
        raise DataError(f"{path}: trailing bytes after declared tensors")
    return header["meta"], tensors
