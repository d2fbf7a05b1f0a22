"""Single-file model checkpoints.

Layout (all integers little-endian)::

    bytes 0..7    magic  b"DECICKPT"
    bytes 8..11   uint32 format version
    bytes 12..19  uint64 header length H
    next H bytes  UTF-8 JSON header (sorted keys, no whitespace)
    remainder     float64 little-endian tensor payload

The header holds the variable specs, the model configuration, free-form
metadata, and a tensor index: a list of ``{"name", "shape", "offset"}`` entries
where ``offset`` counts float64 elements from the start of the payload. Tensors
are stored C-contiguous in index order. See docs/checkpoint-format.md.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import VariableSpec
from .graph import VariationalGraphPosterior
from .numerics.autodiff import Tensor
from .sem import DeciModel

MAGIC = b"DECICKPT"
VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    model: DeciModel
    posterior: VariationalGraphPosterior
    meta: dict = field(default_factory=dict)


def _tensors(model: DeciModel, posterior: VariationalGraphPosterior) -> list[tuple[str, Tensor]]:
    named = [("model." + n, p) for n, p in model.named_parameters()]
    return named + list(posterior.named_parameters())


def to_bytes(model: DeciModel, posterior: VariationalGraphPosterior, meta: dict | None = None) -> bytes:
    index = []
    chunks = []
    offset = 0
    for name, t in _tensors(model, posterior):
        arr = np.ascontiguousarray(t.data, dtype="<f8")
        index.append({"name": name, "shape": list(arr.shape), "offset": offset})
        chunks.append(arr.tobytes())
        offset += arr.size
    header = {
        "variables": [s.to_json() for s in model.specs],
        "model": model.config(),
        "posterior": {"d": posterior.d, "fixed": posterior.fixed},
        "meta": meta or {},
        "tensors": index,
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    return MAGIC + struct.pack("<IQ", VERSION, len(blob)) + blob + b"".join(chunks)


def from_bytes(raw: bytes) -> Checkpoint:
    if len(raw) < 20 or raw[:8] != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    version, hlen = struct.unpack("<IQ", raw[8:20])
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    if 20 + hlen > len(raw):
        raise CheckpointError("truncated checkpoint header")
    try:
        header = json.loads(raw[20 : 20 + hlen].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"corrupt checkpoint header: {exc}") from None
    payload = np.frombuffer(raw[20 + hlen :], dtype="<f8")

    specs = [VariableSpec.from_json(v) for v in header["variables"]]
    model = DeciModel(specs, **header["model"])
    post = header["posterior"]
    posterior = VariationalGraphPosterior(post["d"], fixed=post["fixed"])
    targets = dict(_tensors(model, posterior))
    stored = {e["name"]: e for e in header["tensors"]}
    if set(stored) != set(targets):
        raise CheckpointError("checkpoint tensors do not match the model layout")
    for name, t in targets.items():
        e = stored[name]
        shape = tuple(e["shape"])
        if shape != t.shape:
            raise CheckpointError(f"tensor {name}: stored shape {shape}, expected {t.shape}")
        n = int(np.prod(shape, dtype=np.int64))
        start = e["offset"]
        if start + n > payload.size:
            raise CheckpointError(f"tensor {name} runs past the end of the file")
        t.data = payload[start : start + n].reshape(shape).astype(np.float64)
    return Checkpoint(model, posterior, header.get("meta", {}))


def save_checkpoint(path: str | Path, model: DeciModel, posterior: VariationalGraphPosterior, meta: dict | None = None) -> None:
    Path(path).write_bytes(to_bytes(model, posterior, meta))


def load_checkpoint(path: str | Path) -> Checkpoint:
    return from_bytes(Path(path).read_bytes())
