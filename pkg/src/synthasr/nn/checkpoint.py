"""Checkpoint files: one JSON header line followed by a float32 payload.

Header fields: ``format``, ``epoch``, ``config_hash``, ``meta`` (free-form,
JSON-serialisable) and ``tensors`` -- a list of ``{name, shape}`` in payload
order.  The payload is the concatenation of every tensor, row-major,
little-endian float32.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np
import torch

FORMAT = "synthasr-checkpoint/1"


class CheckpointError(RuntimeError):
    pass


def config_hash(config) -> str:
    blob = json.dumps(config, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def save_checkpoint(path, state: dict[str, torch.Tensor], meta: dict | None = None,
                    epoch: float = 0, config: dict | None = None) -> None:
    tensors, chunks = [], []
    for name, t in state.items():
        if not torch.is_floating_point(t):
            raise CheckpointError(f"tensor {name!r} is not floating point")
        arr = t.detach().cpu().numpy().astype("<f4", copy=False)
        tensors.append({"name": name, "shape": list(arr.shape)})
        chunks.append(np.ascontiguousarray(arr).tobytes())
    header = {
        "format": FORMAT,
        "epoch": epoch,
        "config_hash": config_hash(config or {}),
        "config": config or {},
        "meta": meta or {},
        "tensors": tensors,
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(json.dumps(header, sort_keys=True).encode() + b"\n")
        for chunk in chunks:
            f.write(chunk)


def load_checkpoint(path) -> tuple[dict[str, torch.Tensor], dict]:
    """Returns ``(state, header)``."""
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"checkpoint {path} does not exist")
    with open(path, "rb") as f:
        try:
            header = json.loads(f.readline().decode())
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise CheckpointError(f"{path}: unreadable header") from exc
        if header.get("format") != FORMAT:
            raise CheckpointError(f"{path}: unsupported format {header.get('format')!r}")
        payload = f.read()
    state, offset = {}, 0
    for entry in header["tensors"]:
        count = int(np.prod(entry["shape"], dtype=np.int64))
        nbytes = 4 * count
        if offset + nbytes > len(payload):
            raise CheckpointError(f"{path}: truncated payload at {entry['name']}")
        arr = np.frombuffer(payload, dtype="<f4", count=count, offset=offset).reshape(entry["shape"])
        state[entry["name"]] = torch.from_numpy(arr.astype(np.float32))
        offset += nbytes
    if offset != len(payload):
        raise CheckpointError(f"{path}: trailing bytes in payload")
    return state, header
