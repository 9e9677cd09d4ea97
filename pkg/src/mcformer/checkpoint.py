"""Checkpoint directory: ``manifest.json`` plus a flat ``params.bin``.

The blob holds every parameter as little-endian float64, concatenated in
manifest order. The manifest records name, shape and byte offset of each
parameter together with the model kind, its config and the format version.
"""

from __future__ import annotations

import json
import os
from pathlib import Path

import numpy as np

from .errors import FormatError, ShapeError
from .model import build_model
from .numerics import Tensor

FORMAT = "mcformer-checkpoint"
VERSION = 1
DTYPE_TAG = "<f8"
MANIFEST = "manifest.json"
BLOB = "params.bin"


def save_checkpoint(params: dict, config, path, kind: str = "mcformer") -> Path:
    """Write ``params`` (name -> Tensor or array) and ``config`` under directory ``path``."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    entries = []
    offset = 0
    chunks = []
    for name, value in params.items():
        arr = np.ascontiguousarray(value.data if isinstance(value, Tensor) else value, dtype=DTYPE_TAG)
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset, "nbytes": arr.nbytes})
        offset += arr.nbytes
        chunks.append(arr.tobytes())
    cfg = config.to_dict() if hasattr(config, "to_dict") else dict(config)
    manifest = {
        "format": FORMAT,
        "version": VERSION,
        "dtype": DTYPE_TAG,
        "kind": kind,
        "config": cfg,
        "total_bytes": offset,
        "params": entries,
    }
    with open(path / BLOB, "wb") as fh:
        for c in chunks:
            fh.write(c)
    with open(path / MANIFEST, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2)
        fh.write("\n")
    return path


def _read_manifest(path: Path) -> dict:
    try:
        with open(path / MANIFEST, encoding="utf-8") as fh:
            manifest = json.load(fh)
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path / MANIFEST}: corrupt manifest ({exc})") from exc
    if not isinstance(manifest, dict) or manifest.get("format") != FORMAT:
        raise FormatError(f"{path / MANIFEST}: not a {FORMAT} manifest")
    if manifest.get("version") != VERSION:
        raise FormatError(f"unsupported checkpoint version {manifest.get('version')!r}, expected {VERSION}")
    if manifest.get("dtype") != DTYPE_TAG:
        raise FormatError(f"unsupported dtype tag {manifest.get('dtype')!r}")
    for key in ("kind", "config", "params", "total_bytes"):
        if key not in manifest:
            raise FormatError(f"manifest is missing {key!r}")
    return manifest


def load_checkpoint(path):
    """Return ``(params, config)`` read back from ``path``.

    Shapes in the manifest must match the shapes the stored config implies.
    """
    model = load_model(path)
    return model.params, model.config


def load_model(path):
    """Rebuild the model (MCformer or linear baseline) stored under ``path``."""
    path = Path(path)
    manifest = _read_manifest(path)
    size = os.path.getsize(path / BLOB)
    if size != manifest["total_bytes"]:
        raise FormatError(f"{path / BLOB}: {size} bytes, manifest expects {manifest['total_bytes']}")
    blob = (path / BLOB).read_bytes()

    skeleton = build_model(manifest["kind"], manifest["config"])
    expected = skeleton.shapes
    names = [e["name"] for e in manifest["params"]]
    if set(names) != set(expected):
        raise ShapeError(
            f"parameter names do not match config: missing {sorted(set(expected) - set(names))}, "
            f"unexpected {sorted(set(names) - set(expected))}"
        )
    params = {}
    for e in manifest["params"]:
        shape = tuple(e["shape"])
        if shape != tuple(expected[e["name"]]):
            raise ShapeError(f"{e['name']}: manifest shape {list(shape)} != config shape {list(expected[e['name']])}")
        n = int(np.prod(shape)) * 8
        off = e["offset"]
        if e.get("nbytes", n) != n or off < 0 or off + n > len(blob):
            raise FormatError(f"{e['name']}: byte range [{off}, {off + n}) is inconsistent with the blob")
        arr = np.frombuffer(blob, dtype=DTYPE_TAG, count=n // 8, offset=off).reshape(shape)
        params[e["name"]] = Tensor(arr.astype(np.float64), requires_grad=True, name=e["name"])
    ordered = {k: params[k] for k in expected}
    return build_model(manifest["kind"], manifest["config"], ordered)
