"""Checkpoint format: JSON manifest plus a little-endian float64 sidecar.

The manifest lists each array's name, shape, dtype and byte offset into the
sidecar file, in the order the arrays were written.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Mapping

import numpy as np

from .exceptions import ParseError

FORMAT_VERSION = 1
_DTYPE = "<f8"


def save_checkpoint(arrays: Mapping[str, np.ndarray], path, metadata: dict | None = None) -> Path:
    """Write ``<path>.json`` and ``<path>.bin``; returns the manifest path."""
    base = Path(path)
    if base.suffix in (".json", ".bin"):
        base = base.with_suffix("")
    base.parent.mkdir(parents=True, exist_ok=True)
    entries, offset, chunks = [], 0, []
    for name, value in arrays.items():
        arr = np.array(value, dtype=_DTYPE, order="C")
        entries.append({"name": name, "shape": list(arr.shape), "dtype": "float64", "offset": offset})
        chunks.append(arr.tobytes(order="C"))
        offset += arr.nbytes
    manifest = {
        "format": "twostream_har.checkpoint",
        "version": FORMAT_VERSION,
        "byteorder": "little",
        "data_file": base.name + ".bin",
        "total_bytes": offset,
        "parameters": entries,
        "metadata": metadata or {},
    }
    base.with_suffix(".bin").write_bytes(b"".join(chunks))
    manifest_path = base.with_suffix(".json")
    manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return manifest_path


def load_checkpoint(path) -> tuple[dict, dict]:
    """Return ``(arrays, metadata)`` from a checkpoint written by :func:`save_checkpoint`."""
    base = Path(path)
    if base.suffix in (".json", ".bin"):
        base = base.with_suffix("")
    manifest_path = base.with_suffix(".json")
    manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    blob = (manifest_path.parent / manifest["data_file"]).read_bytes()
    if len(blob) != manifest["total_bytes"]:
        raise ParseError(manifest_path, 0, f"sidecar has {len(blob)} bytes, manifest says {manifest['total_bytes']}")
    arrays = {}
    for entry in manifest["parameters"]:
        count = int(np.prod(entry["shape"], dtype=np.int64))
        flat = np.frombuffer(blob, dtype=_DTYPE, count=count, offset=entry["offset"])
        arrays[entry["name"]] = flat.reshape(entry["shape"]).astype(np.float64)
    return arrays, manifest.get("metadata", {})
