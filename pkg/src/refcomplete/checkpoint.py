"""Named-tensor checkpoint container.

Binary layout (everything little-endian):

    bytes 0..7    magic  b"RCCKPT01"
    bytes 8..15   uint64 header length H
    bytes 16..16+H  UTF-8 JSON header:
                    {"tensors": [{"name": str, "shape": [int,...], "offset": int}, ...],
                     "meta": {...}}
                  offsets are element offsets into the payload, in order
    remainder     payload: concatenated float64 values, little-endian

Values are always stored as 64-bit floats regardless of the in-memory dtype;
`meta` carries arbitrary JSON (run config, optimizer scalars, RNG state).
"""

from __future__ import annotations

import json
import struct

import numpy as np

MAGIC = b"RCCKPT01"


class CheckpointError(ValueError):
    pass


def save_tensors(path, tensors: dict[str, np.ndarray], meta: dict | None = None):
    names = list(tensors.keys())
    entries = []
    offset = 0
    blobs = []
    for name in names:
        arr = np.ascontiguousarray(tensors[name], dtype=np.float64)
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset})
        offset += arr.size
        blobs.append(arr)
    header = json.dumps(
        {"tensors": entries, "meta": meta or {}}, sort_keys=True, separators=(",", ":")
    ).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<Q", len(header)))
        f.write(header)
        for arr in blobs:
            f.write(arr.astype("<f8").tobytes())


def load_tensors(path, dtype=np.float64) -> tuple[dict[str, np.ndarray], dict]:
    with open(path, "rb") as f:
        magic = f.read(8)
        if magic != MAGIC:
            raise CheckpointError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}")
        (hlen,) = struct.unpack("<Q", f.read(8))
        header = json.loads(f.read(hlen).decode("utf-8"))
        payload = np.frombuffer(f.read(), dtype="<f8")
    tensors = {}
    for entry in header["tensors"]:
        shape = tuple(entry["shape"])
        n = int(np.prod(shape)) if shape else 1
        start = entry["offset"]
        arr = payload[start:start + n].reshape(shape).astype(dtype)
        tensors[entry["name"]] = arr
    return tensors, header.get("meta", {})
