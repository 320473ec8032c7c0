"""Checkpoint container: magic bytes, version, JSON header, raw float blobs.

Layout: b"MTCK" | u32 version (LE) | u64 header length (LE) | header JSON
(UTF-8) | one raw little-endian array blob per entry, in header order.
The header carries tensor names, shapes, dtype, and an arbitrary JSON
"wiring" payload describing how to rebuild the owning model.
"""

from __future__ import annotations

import json
import struct

import numpy as np

MAGIC = b"MTCK"
VERSION = 1


class CheckpointError(IOError):
    pass


def save_arrays(path, arrays, wiring=None):
    """Write named arrays plus a wiring payload. Order follows the dict."""
    names = list(arrays)
    header = {
        "version": VERSION,
        "wiring": wiring,
        "tensors": [
            {"name": n, "shape": list(arrays[n].shape), "dtype": str(arrays[n].dtype)}
            for n in names
        ],
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", VERSION))
        f.write(struct.pack("<Q", len(blob)))
        f.write(blob)
        for n in names:
            arr = np.ascontiguousarray(arrays[n])
            f.write(arr.astype(arr.dtype.newbyteorder("<")).tobytes())


def load_arrays(path):
    """Read a checkpoint back; returns (arrays dict, wiring payload)."""
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < 16 or raw[:4] != MAGIC:
        raise CheckpointError(f"bad magic in {path}")
    (version,) = struct.unpack("<I", raw[4:8])
    if version != VERSION:
        raise CheckpointError(f"version mismatch: file {version}, supported {VERSION}")
    (header_len,) = struct.unpack("<Q", raw[8:16])
    if len(raw) < 16 + header_len:
        raise CheckpointError(f"truncated file: {path}")
    header = json.loads(raw[16:16 + header_len].decode("utf-8"))
    arrays = {}
    offset = 16 + header_len
    for entry in header["tensors"]:
        dtype = np.dtype(entry["dtype"]).newbyteorder("<")
        count = int(np.prod(entry["shape"])) if entry["shape"] else 1
        nbytes = dtype.itemsize * count
        if offset + nbytes > len(raw):
            raise CheckpointError(f"truncated file: {path}")
        arr = np.frombuffer(raw[offset:offset + nbytes], dtype=dtype).reshape(entry["shape"])
        arrays[entry["name"]] = arr.astype(np.dtype(entry["dtype"]))
        offset += nbytes
    return arrays, header.get("wiring")
