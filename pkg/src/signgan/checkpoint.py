"""Single-file checkpoints: magic, JSON header, raw little-endian tensor bytes.

Layout::

    b"SGCK" | uint32 header_len | header JSON (utf-8) | tensor payload

The header carries caller metadata under ``"meta"`` and a tensor index
(name, dtype, shape, offset, nbytes).  Keys are written in sorted order so
identical state produces identical bytes.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Any

import numpy as np
import torch

MAGIC = b"SGCK"
SCHEMA_VERSION = 1


class CheckpointError(RuntimeError):
    pass


def _flatten(prefix: str, obj: Any, tensors: dict, skeleton_path=()):
    """Split nested state into (json skeleton, flat tensor dict)."""
    if isinstance(obj, torch.Tensor):
        key = prefix
        tensors[key] = obj
        return {"__tensor__": key}
    if isinstance(obj, dict):
        return {"__dict__": [[_key(k), _flatten(f"{prefix}/{k}", v, tensors)] for k, v in obj.items()]}
    if isinstance(obj, (list, tuple)):
        return {"__list__": [_flatten(f"{prefix}/{i}", v, tensors) for i, v in enumerate(obj)]}
    return obj


def _key(k):
    return {"int": k} if isinstance(k, int) else k


def _unflatten(sk: Any, tensors: dict):
    if isinstance(sk, dict):
        if "__tensor__" in sk:
            return tensors[sk["__tensor__"]]
        if "__dict__" in sk:
            return {(k["int"] if isinstance(k, dict) else k): _unflatten(v, tensors) for k, v in sk["__dict__"]}
        if "__list__" in sk:
            return [_unflatten(v, tensors) for v in sk["__list__"]]
    return sk


def save_checkpoint(path: str | Path, meta: dict, state: dict) -> None:
    """Write ``state`` (nested dicts/lists of tensors and plain values)."""
    tensors: dict[str, torch.Tensor] = {}
    skeleton = _flatten("", state, tensors)
    index = []
    chunks = []
    offset = 0
    for name in sorted(tensors):
        t = tensors[name].detach().cpu().contiguous()
        arr = t.numpy() if t.dtype != torch.bfloat16 else t.float().numpy()
        raw = arr.astype(arr.dtype.newbyteorder("<"), copy=False).tobytes()
        index.append({"name": name, "dtype": str(arr.dtype), "shape": list(arr.shape), "offset": offset, "nbytes": len(raw)})
        chunks.append(raw)
        offset += len(raw)
    header = {"schema_version": SCHEMA_VERSION, "meta": meta, "index": index, "skeleton": skeleton}
    hbytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(hbytes)))
        fh.write(hbytes)
        for c in chunks:
            fh.write(c)
    tmp.replace(path)


def read_header(path: str | Path) -> dict:
    with open(path, "rb") as fh:
        if fh.read(4) != MAGIC:
            raise CheckpointError(f"{path} is not a checkpoint file")
        (n,) = struct.unpack("<I", fh.read(4))
        return json.loads(fh.read(n).decode("utf-8"))


def load_checkpoint(path: str | Path) -> tuple[dict, dict]:
    """Return (meta, state)."""
    data = Path(path).read_bytes()
    if data[:4] != MAGIC:
        raise CheckpointError(f"{path} is not a checkpoint file")
    (n,) = struct.unpack("<I", data[4:8])
    header = json.loads(data[8 : 8 + n].decode("utf-8"))
    if header.get("schema_version") != SCHEMA_VERSION:
        raise CheckpointError(f"unsupported checkpoint schema {header.get('schema_version')}")
    base = 8 + n
    tensors = {}
    for ent in header["index"]:
        raw = data[base + ent["offset"] : base + ent["offset"] + ent["nbytes"]]
        arr = np.frombuffer(raw, dtype=np.dtype(ent["dtype"]).newbyteorder("<")).reshape(ent["shape"])
        tensors[ent["name"]] = torch.from_numpy(arr.copy())
    return header["meta"], _unflatten(header["skeleton"], tensors)
