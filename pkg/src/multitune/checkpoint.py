"""Binary checkpoint container.

Layout (all integers little-endian)::

    magic  b"MTCK"
    u32    format version
    u32    header length N
    N      UTF-8 JSON header: {"config": ..., "params": [{name, shape, group, tunable}, ...]}
    ...    float32 little-endian arrays, concatenated in header order
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .model import ModelConfig
from .params import ParamStore

MAGIC = b"MTCK"
VERSION = 1


class CheckpointError(ValueError):
    pass


def to_bytes(store: ParamStore, group: str | None = None) -> bytes:
    names = store.names(group)
    table = []
    for n in names:
        p = store.param(n)
        table.append({"name": n, "shape": list(p.tensor.shape), "group": p.group, "tunable": p.tunable})
    cfg = store.config.to_dict() if store.config is not None else None
    header = json.dumps({"config": cfg, "params": table}, sort_keys=True, separators=(",", ":")).encode()
    parts = [MAGIC, struct.pack("<II", VERSION, len(header)), header]
    for n in names:
        parts.append(np.ascontiguousarray(store[n].data, dtype="<f4").tobytes())
    return b"".join(parts)


def from_bytes(blob: bytes) -> ParamStore:
    if blob[:4] != MAGIC:
        raise CheckpointError("not a checkpoint (bad magic)")
    version, hlen = struct.unpack_from("<II", blob, 4)
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    header = json.loads(blob[12:12 + hlen].decode())
    cfg = ModelConfig.from_dict(header["config"]) if header["config"] is not None else None
    store = ParamStore(cfg)
    off = 12 + hlen
    for entry in header["params"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(blob, dtype="<f4", count=count, offset=off).reshape(shape)
        off += 4 * count
        store.register(entry["name"], arr.astype(np.float32), entry["group"], entry["tunable"])
    if off != len(blob):
        raise CheckpointError(f"trailing bytes in checkpoint ({len(blob) - off})")
    return store


def save(store: ParamStore, path, group: str | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(to_bytes(store, group))
    return path


def load(path) -> ParamStore:
    try:
        blob = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    return from_bytes(blob)
