"""Deterministic binary checkpoint container.

Layout: 8-byte magic, 8-byte little-endian header length, JSON header with
sorted keys (version, metadata, array manifest), then the raw float64 array
blocks in manifest order. Two identical states serialize to identical bytes
(no timestamps), and writes are atomic (temp file + rename).
"""

from __future__ import annotations

import json
import os
import struct

import numpy as np

MAGIC = b"I3DCKPT1"
FORMAT_VERSION = 1


def save_checkpoint(path, meta: dict, arrays: dict[str, np.ndarray]):
    names = sorted(arrays)
    manifest = []
    blocks = []
    for name in names:
        arr = np.ascontiguousarray(arrays[name], dtype=np.float64)
        manifest.append({"name": name, "shape": list(arr.shape)})
        blocks.append(arr.tobytes())
    header = {"version": FORMAT_VERSION, "meta": meta, "arrays": manifest}
    payload = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(payload)))
        fh.write(payload)
        for block in blocks:
            fh.write(block)
    os.replace(tmp, path)


def load_checkpoint(path):
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != MAGIC:
            raise ValueError(f"{path}: not a checkpoint file (bad magic {magic!r})")
        (hlen,) = struct.unpack("<Q", fh.read(8))
        header = json.loads(fh.read(hlen).decode("utf-8"))
        if header.get("version") != FORMAT_VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {header.get('version')}")
        arrays = {}
        for entry in header["arrays"]:
            shape = tuple(entry["shape"])
            count = int(np.prod(shape)) if shape else 1
            buf = fh.read(count * 8)
            arrays[entry["name"]] = np.frombuffer(buf, dtype="<f8").reshape(shape).copy()
    return header["meta"], arrays
