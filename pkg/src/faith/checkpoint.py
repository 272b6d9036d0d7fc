"""Self-describing checkpoint container.

Layout::

    b"FAITHCKP"                 8-byte magic
    uint32 LE                   format version
    uint64 LE                   header length H
    H bytes UTF-8 JSON          header (config, tensor table, metadata)
    payload                     concatenated little-endian float64 arrays

The header's ``tensors`` list holds ``{"name", "shape", "offset"}`` entries,
offsets in bytes from the start of the payload. Optimizer moments are stored
as tensors named ``opt/<slot>/<param>``.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"FAITHCKP"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


def save_tensors(path, tensors: dict[str, np.ndarray], meta: dict) -> None:
    table = []
    chunks = []
    offset = 0
    for name, arr in tensors.items():
        a = np.ascontiguousarray(arr, dtype="<f8")
        table.append({"name": name, "shape": list(a.shape), "offset": offset})
        chunks.append(a.tobytes())
        offset += a.nbytes
    header = dict(meta)
    header["format_version"] = FORMAT_VERSION
    header["tensors"] = table
    hb = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IQ", FORMAT_VERSION, len(hb)))
        fh.write(hb)
        for c in chunks:
            fh.write(c)


def load_tensors(path) -> tuple[dict[str, np.ndarray], dict]:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    raw = path.read_bytes()
    if raw[:8] != MAGIC:
        raise CheckpointError(f"{path}: not a FAITH checkpoint")
    version, hlen = struct.unpack("<IQ", raw[8:20])
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported format version {version}")
    header = json.loads(raw[20 : 20 + hlen].decode("utf-8"))
    payload = memoryview(raw)[20 + hlen :]
    tensors = {}
    for entry in header.pop("tensors"):
        n = int(np.prod(entry["shape"], dtype=np.int64))
        start = entry["offset"]
        arr = np.frombuffer(payload[start : start + 8 * n], dtype="<f8")
        if arr.size != n:
            raise CheckpointError(f"{path}: truncated payload for {entry['name']}")
        tensors[entry["name"]] = arr.reshape(entry["shape"]).astype(np.float64)
    return tensors, header


def save_model(path, model, extra: dict | None = None, extra_tensors: dict | None = None) -> None:
    tensors = {name: p.data for name, p in model.params.items()}
    if extra_tensors:
        tensors.update(extra_tensors)
    meta = {"model_config": model.config.to_dict(), "params": list(model.params)}
    if extra:
        meta.update(extra)
    save_tensors(path, tensors, meta)


def load_model(path):
    """Rebuild a :class:`~faith.model.FaithModel` from a checkpoint; returns ``(model, header, tensors)``."""
    from .model import FaithModel, ModelConfig

    tensors, header = load_tensors(path)
    model = FaithModel(ModelConfig.from_dict(header["model_config"]))
    names = header["params"]
    if set(names) != set(model.params):
        missing = sorted(set(model.params) - set(names))
        raise CheckpointError(f"{path}: parameter set does not match config (missing {missing[:3]})")
    for name in names:
        if tensors[name].shape != model.params[name].shape:
            raise CheckpointError(
                f"{path}: {name} has shape {tensors[name].shape}, expected {model.params[name].shape}"
            )
        model.params[name].data = tensors[name].copy()
    return model, header, tensors
