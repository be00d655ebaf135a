"""WAV input/output for mono and Ambisonics buffers.

Files are 32-bit float, interleaved. Ambisonics files get a ``.json``
sidecar next to them holding the order and channel convention, which WAV
has no standard field for.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
from scipy.io import wavfile

from .encode import AmbisonicsBuffer, MonoBuffer
from .sh import n_channels


def sidecar_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".json")


def read_wav(path) -> tuple[np.ndarray, int]:
    """Read a WAV as float64, shape (channels, samples)."""
    rate, data = wavfile.read(str(path))
    if data.dtype.kind == "i":
        data = data.astype(float) / float(np.iinfo(data.dtype).max + 1)
    elif data.dtype.kind == "u":
        data = (data.astype(float) - 128.0) / 128.0
    else:
        data = data.astype(float)
    if data.ndim == 1:
        data = data[None, :]
    else:
        data = data.T
    return np.ascontiguousarray(data), int(rate)


def write_wav(path, data: np.ndarray, sample_rate: int) -> None:
    data = np.asarray(data, dtype=np.float32)
    if data.ndim == 2:
        data = data.T
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    wavfile.write(str(path), int(sample_rate), np.ascontiguousarray(data))


def read_mono(path) -> MonoBuffer:
    data, rate = read_wav(path)
    if data.shape[0] != 1:
        raise ValueError(f"{path}: expected a mono file, found {data.shape[0]} channels")
    return MonoBuffer(data[0], rate)


def write_mono(path, buf: MonoBuffer) -> None:
    write_wav(path, buf.samples, buf.sample_rate)


def write_ambisonics(path, buf: AmbisonicsBuffer) -> None:
    write_wav(path, buf.data, buf.sample_rate)
    tag = {"order": buf.order, "convention": buf.convention, "channel_order": "ACN"}
    sidecar_path(path).write_text(json.dumps(tag, indent=2, sort_keys=True) + "\n")


def read_ambisonics(path, order: int | None = None, convention: str | None = None) -> AmbisonicsBuffer:
    """Read an Ambisonics WAV; the sidecar fills in order and convention.

    Without a sidecar the order is inferred from the channel count and the
    convention defaults to orthonormal.
    """
    data, rate = read_wav(path)
    meta = {}
    side = sidecar_path(path)
    if side.exists():
        meta = json.loads(side.read_text())
    if order is None:
        order = meta.get("order")
    if order is None:
        order = int(round(np.sqrt(data.shape[0]))) - 1
        if n_channels(order) != data.shape[0]:
            raise ValueError(f"{path}: {data.shape[0]} channels is not a full SH set")
    if convention is None:
        convention = meta.get("convention", "orthonormal")
    return AmbisonicsBuffer(data, int(order), rate, convention)
