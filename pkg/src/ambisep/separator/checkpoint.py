"""Checkpoint container.

Layout: the 8-byte magic ``AMBISEP1``, a little-endian uint64 header
length, a UTF-8 JSON header, then every tensor as little-endian float32
in the order listed in the header's ``tensors`` manifest.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np
import torch

from .model import DirectionalDemucs, ModelConfig

MAGIC = b"AMBISEP1"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, model: DirectionalDemucs, seed: int | None = None,
                    metrics: dict | None = None, extra: dict | None = None) -> None:
    state = model.state_dict()
    tensors = []
    blobs = []
    offset = 0
    for name, t in state.items():
        arr = t.detach().cpu().numpy().astype("<f4")
        tensors.append({"name": name, "shape": list(arr.shape), "offset": offset})
        offset += arr.size
        blobs.append(arr.tobytes())
    header = {
        "version": FORMAT_VERSION,
        "config": model.config.to_dict(),
        "seed": seed,
        "metrics": metrics or {},
        "extra": extra or {},
        "dtype": "float32-le",
        "tensors": tensors,
    }
    raw = json.dumps(header, sort_keys=True).encode("utf-8")
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<Q", len(raw)))
        f.write(raw)
        for b in blobs:
            f.write(b)


def load_checkpoint(path) -> tuple[DirectionalDemucs, dict]:
    data = Path(path).read_bytes()
    if data[:len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    (n,) = struct.unpack("<Q", data[len(MAGIC):len(MAGIC) + 8])
    start = len(MAGIC) + 8
    header = json.loads(data[start:start + n].decode("utf-8"))
    if header.get("version") != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {header.get('version')}")
    payload = np.frombuffer(data, dtype="<f4", offset=start + n)
    model = DirectionalDemucs(ModelConfig.from_dict(header["config"]))
    expected = model.state_dict()
    names = [t["name"] for t in header["tensors"]]
    if sorted(names) != sorted(expected):
        raise CheckpointError(f"{path}: tensor set does not match the configuration")
    state = {}
    for t in header["tensors"]:
        size = int(np.prod(t["shape"], dtype=np.int64))
        if t["offset"] + size > payload.size:
            raise CheckpointError(f"{path}: truncated payload")
        arr = payload[t["offset"]:t["offset"] + size].reshape(t["shape"])
        state[t["name"]] = torch.from_numpy(arr.astype(np.float32))
    model.load_state_dict(state)
    model.eval()
    return model, header
