"""Flat binary checkpoint files.

Layout (all little-endian):

* 8-byte magic ``GSSMCKPT``
* u32 length of the JSON index that follows
* UTF-8 JSON index: ``{"version": 1, "records": [{"name", "shape",
  "offset", "nbytes"}, ...]}`` with offsets relative to the start of the
  data section
* concatenated float64 LE buffers in record order

Records are written sorted by name so identical parameter sets produce
identical files.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

__all__ = ["save_arrays", "load_arrays", "CheckpointError"]

MAGIC = b"GSSMCKPT"


class CheckpointError(RuntimeError):
    """Checkpoint file is missing, truncated, or malformed."""


def save_arrays(path: str | Path, arrays: dict[str, np.ndarray]) -> None:
    records = []
    blobs = []
    offset = 0
    for name in sorted(arrays):
        # tobytes always emits C order; avoid ascontiguousarray, which
        # would silently promote 0-d arrays to shape (1,)
        arr = np.asarray(arrays[name], dtype="<f8")
        blob = arr.tobytes()
        records.append({"name": name, "shape": list(arr.shape),
                        "offset": offset, "nbytes": len(blob)})
        blobs.append(blob)
        offset += len(blob)
    index = json.dumps({"version": 1, "records": records},
                       sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(index)))
        fh.write(index)
        for blob in blobs:
            fh.write(blob)


def load_arrays(path: str | Path) -> dict[str, np.ndarray]:
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"checkpoint not found: {path}")
    raw = path.read_bytes()
    if len(raw) < len(MAGIC) + 4 or raw[:len(MAGIC)] != MAGIC:
        raise CheckpointError(f"not a checkpoint file: {path}")
    (index_len,) = struct.unpack_from("<I", raw, len(MAGIC))
    header_end = len(MAGIC) + 4 + index_len
    if len(raw) < header_end:
        raise CheckpointError(f"truncated checkpoint index: {path}")
    try:
        index = json.loads(raw[len(MAGIC) + 4:header_end].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"bad checkpoint index in {path}: {exc}") from exc
    data = raw[header_end:]
    out: dict[str, np.ndarray] = {}
    for rec in index.get("records", []):
        lo, hi = rec["offset"], rec["offset"] + rec["nbytes"]
        if hi > len(data):
            raise CheckpointError(f"truncated checkpoint data: {path}")
        arr = np.frombuffer(data[lo:hi], dtype="<f8").reshape(rec["shape"])
        out[rec["name"]] = arr.astype(np.float64).copy()
    return out
