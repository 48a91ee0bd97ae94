"""Flat binary tensor container with a JSON index.

``tensors.bin`` holds back-to-back records::

    u32 name_len | name (utf-8) | u32 ndim | u64 dims[ndim] | f64 data (little-endian)

``index.json`` lists every record's name, shape and byte offset of its data,
plus free-form metadata.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

BIN_NAME = "tensors.bin"
INDEX_NAME = "index.json"
FORMAT = "tsrdiff-tensors-v1"


def save_tensors(directory: str | Path, tensors: dict[str, np.ndarray], meta: dict | None = None) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    records = []
    offset = 0
    with open(directory / BIN_NAME, "wb") as fh:
        for name in sorted(tensors):
            arr = np.array(tensors[name], dtype="<f8", order="C")  # keeps 0-d shapes, unlike ascontiguousarray
            raw_name = name.encode("utf-8")
            head = struct.pack("<I", len(raw_name)) + raw_name + struct.pack("<I", arr.ndim)
            head += struct.pack(f"<{arr.ndim}Q", *arr.shape)
            fh.write(head)
            offset += len(head)
            data = arr.tobytes()
            fh.write(data)
            records.append({"name": name, "shape": list(arr.shape), "offset": offset, "nbytes": len(data)})
            offset += len(data)
    index = {"format": FORMAT, "tensors": records, "meta": meta or {}}
    (directory / INDEX_NAME).write_text(json.dumps(index, indent=1, sort_keys=True))
    return directory


def read_index(directory: str | Path) -> dict:
    return json.loads((Path(directory) / INDEX_NAME).read_text())


def load_tensors(directory: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    directory = Path(directory)
    index = read_index(directory)
    if index.get("format") != FORMAT:
        raise ValueError(f"{directory}: unknown checkpoint format {index.get('format')!r}")
    raw = (directory / BIN_NAME).read_bytes()
    out = {}
    for rec in index["tensors"]:
        pos = rec["offset"] - 8 * len(rec["shape"]) - 4
        ndim = struct.unpack_from("<I", raw, pos)[0]
        dims = struct.unpack_from(f"<{ndim}Q", raw, pos + 4)
        if list(dims) != rec["shape"]:
            raise ValueError(f"{rec['name']}: index shape {rec['shape']} disagrees with record {dims}")
        arr = np.frombuffer(raw, dtype="<f8", count=rec["nbytes"] // 8, offset=rec["offset"])
        out[rec["name"]] = arr.reshape(dims).astype(np.float64)
    return out, index.get("meta", {})
