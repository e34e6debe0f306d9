"""Self-describing binary container for named arrays.

Layout: magic, u32 header length, UTF-8 JSON header, then the raw array
blocks back to back in header order. Bytes are a pure function of the
content, so equal payloads hash equal (unlike zip-based formats, which
embed timestamps).
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"PFPC"
SCHEMA_VERSION = 1

_ALLOWED_DTYPES = {"float32", "float64", "int64", "int32", "uint8", "bool"}


class ContainerError(RuntimeError):
    pass


def save_arrays(path: str | Path, arrays: dict[str, np.ndarray], meta: dict | None = None) -> None:
    """Write named arrays plus a JSON meta block. Overwrites atomically."""
    entries = []
    blocks = []
    offset = 0
    for name, arr in arrays.items():
        arr = np.ascontiguousarray(arr)
        if arr.dtype.name not in _ALLOWED_DTYPES:
            raise ContainerError(f"unsupported dtype {arr.dtype} for entry {name!r}")
        raw = arr.tobytes()
        entries.append({
            "name": name,
            "dtype": arr.dtype.name,
            "shape": list(arr.shape),
            "offset": offset,
            "nbytes": len(raw),
        })
        blocks.append(raw)
        offset += len(raw)
    header = {
        "schema_version": SCHEMA_VERSION,
        "meta": meta or {},
        "entries": entries,
    }
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", len(header_bytes)))
        f.write(header_bytes)
        for raw in blocks:
            f.write(raw)
    tmp.replace(path)


def load_arrays(path: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    """Read a container written by save_arrays. Returns (arrays, meta)."""
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != MAGIC:
            raise ContainerError(f"{path}: not a prefplan container (bad magic {magic!r})")
        (header_len,) = struct.unpack("<I", f.read(4))
        header = json.loads(f.read(header_len).decode("utf-8"))
        if header.get("schema_version") != SCHEMA_VERSION:
            raise ContainerError(f"{path}: unsupported schema version {header.get('schema_version')}")
        payload = f.read()
    arrays = {}
    for ent in header["entries"]:
        start, n = ent["offset"], ent["nbytes"]
        arr = np.frombuffer(payload[start:start + n], dtype=ent["dtype"]).reshape(ent["shape"])
        arrays[ent["name"]] = arr.copy()
    return arrays, header["meta"]


def file_sha256(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()
