"""Named-tensor checkpoint container.

``<stem>.json`` is the manifest and ``<stem>.bin`` holds every tensor as
little-endian float64, row-major, concatenated in manifest order::

    {"format": "lsslab-tensors", "version": 1, "data_file": "<stem>.bin",
     "tensors": [{"name": ..., "shape": [...], "offset": <bytes>}, ...],
     "meta": {...}}
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from ..errors import LoadError

FORMAT = "lsslab-tensors"
VERSION = 1


def save_tensors(path, tensors: dict, meta: dict | None = None) -> Path:
    path = Path(path).with_suffix(".json")
    data_path = path.with_suffix(".bin")
    entries, offset, chunks = [], 0, []
    for name in sorted(tensors):
        arr = np.asarray(tensors[name], dtype="<f8")
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset})
        chunks.append(arr.tobytes(order="C"))
        offset += arr.nbytes
    data_path.write_bytes(b"".join(chunks))
    manifest = {"format": FORMAT, "version": VERSION, "data_file": data_path.name,
                "tensors": entries, "meta": meta or {}}
    path.write_text(json.dumps(manifest, sort_keys=True, indent=1) + "\n", encoding="utf-8")
    return path


def load_tensors(path) -> tuple[dict, dict]:
    path = Path(path).with_suffix(".json")
    if not path.is_file():
        raise LoadError(f"checkpoint manifest not found: {path}")
    manifest = json.loads(path.read_text(encoding="utf-8"))
    if manifest.get("format") != FORMAT or manifest.get("version") != VERSION:
        raise LoadError(f"unsupported checkpoint format in {path}")
    blob = (path.parent / manifest["data_file"]).read_bytes()
    tensors = {}
    for e in manifest["tensors"]:
        count = int(np.prod(e["shape"])) if e["shape"] else 1
        arr = np.frombuffer(blob, dtype="<f8", count=count, offset=e["offset"])
        tensors[e["name"]] = arr.reshape(tuple(e["shape"])).astype(np.float64)
    return tensors, manifest.get("meta", {})
