"""Parameter checkpoints: a one-line JSON header (layer names, shapes,
metadata, config hash) followed by the flat concatenation of all layers as
little-endian 64-bit floats."""

from __future__ import annotations

import hashlib
import json

import numpy as np

MAGIC = "chunklab-ckpt-v1"


def config_hash(meta: dict) -> str:
    blob = json.dumps(meta, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]


def save_checkpoint(path, arrays: dict[str, np.ndarray], meta: dict) -> None:
    names = sorted(arrays)
    header = {
        "format": MAGIC,
        "layers": [{"name": n, "shape": list(arrays[n].shape)} for n in names],
        "meta": meta,
        "config_hash": config_hash(meta),
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode("utf-8"))
        fh.write(b"\n")
        for n in names:
            fh.write(np.ascontiguousarray(arrays[n], dtype="<f8").tobytes())


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    with open(path, "rb") as fh:
        header_line = fh.readline()
        try:
            header = json.loads(header_line.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise ValueError(f"not a checkpoint file: {path}") from exc
        if header.get("format") != MAGIC:
            raise ValueError(f"unknown checkpoint format in {path}")
        blob = fh.read()
    arrays: dict[str, np.ndarray] = {}
    off = 0
    for layer in header["layers"]:
        shape = tuple(layer["shape"])
        n = int(np.prod(shape)) if shape else 1
        chunk = np.frombuffer(blob, dtype="<f8", count=n, offset=off)
        arrays[layer["name"]] = chunk.reshape(shape).astype(np.float64)
        off += n * 8
    if off != len(blob):
        raise ValueError(f"checkpoint payload size mismatch in {path}")
    return arrays, header["meta"]
