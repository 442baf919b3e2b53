"""Single-file checkpoint format: JSON header line + raw little-endian float64.

The header records tensor names, shapes and byte offsets into the binary
section that follows; round-trips are bit-exact. The same container backs
dataset sample caches.
"""

from __future__ import annotations

import json
from typing import Dict, Optional, Tuple

import numpy as np

FORMAT_TAG = "structseg-blob-v1"


def write_blob(path, arrays: Dict[str, np.ndarray], meta: Optional[dict] = None) -> None:
    """Write named float64 arrays with a JSON header; offsets are relative
    to the start of the binary section (the byte after the header newline)."""
    entries = []
    blobs = []
    offset = 0
    for name, arr in arrays.items():
        a = np.asarray(arr, dtype="<f8")
        raw = np.ascontiguousarray(a).tobytes()
        entries.append({
            "name": name,
            "shape": list(a.shape),
            "offset": offset,
            "nbytes": len(raw),
        })
        blobs.append(raw)
        offset += len(raw)
    header = {"format": FORMAT_TAG, "meta": meta or {}, "tensors": entries}
    with open(path, "wb") as f:
        f.write(json.dumps(header, sort_keys=True).encode("utf-8"))
        f.write(b"\n")
        for raw in blobs:
            f.write(raw)


def read_blob(path) -> Tuple[Dict[str, np.ndarray], dict]:
    with open(path, "rb") as f:
        header_line = f.readline()
        data = f.read()
    header = json.loads(header_line.decode("utf-8"))
    if header.get("format") != FORMAT_TAG:
        raise ValueError(f"read_blob: {path} is not a {FORMAT_TAG} file")
    arrays = {}
    for entry in header["tensors"]:
        n = entry["nbytes"]
        off = entry["offset"]
        arr = np.frombuffer(data[off:off + n], dtype="<f8").reshape(entry["shape"])
        arrays[entry["name"]] = arr.astype(np.float64)
    return arrays, header.get("meta", {})
