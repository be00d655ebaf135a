"""Ambisonics encoding of mono sources (anechoic and convolutive)."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import signal

from .sh import Direction, channel_orders, n_channels, sh_eval

CONVENTIONS = ("orthonormal", "ambix_sn3d")

# kernels at least this long are convolved with FFT overlap-add
FFT_THRESHOLD = 128


@dataclass
class MonoBuffer:
    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=float)
        if self.samples.ndim != 1:
            raise ValueError("MonoBuffer samples must be one-dimensional")
        if self.sample_rate <= 0:
            raise ValueError("sample_rate must be positive")
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("MonoBuffer contains non-finite samples")

    def __len__(self) -> int:
        return self.samples.shape[0]

    @property
    def duration(self) -> float:
        return len(self) / self.sample_rate


@dataclass
class AmbisonicsBuffer:
    """SH-domain multichannel audio, ``data`` shaped (channels, samples)."""

    data: np.ndarray
    order: int
    sample_rate: int
    convention: str = "orthonormal"

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=float)
        if self.data.ndim != 2:
            raise ValueError("AmbisonicsBuffer data must be (channels, samples)")
        if self.data.shape[0] != n_channels(self.order):
            raise ValueError(
                f"order {self.order} needs {n_channels(self.order)} channels, "
                f"got {self.data.shape[0]}"
            )
        if self.convention not in CONVENTIONS:
            raise ValueError(f"unknown convention {self.convention!r}")
        if self.sample_rate <= 0:
            raise ValueError("sample_rate must be positive")

    @property
    def n_samples(self) -> int:
        return self.data.shape[1]

    def truncate_order(self, order: int) -> "AmbisonicsBuffer":
        if order > self.order:
            raise ValueError(f"cannot truncate order {self.order} to {order}")
        return AmbisonicsBuffer(
            self.data[: n_channels(order)].copy(), order, self.sample_rate, self.convention
        )


@dataclass
class ArirSet:
    """Per-source SH-domain room impulse responses."""

    responses: list[AmbisonicsBuffer] = field(default_factory=list)

    def __post_init__(self):
        if self.responses:
            first = self.responses[0]
            for r in self.responses[1:]:
                if r.order != first.order or r.sample_rate != first.sample_rate:
                    raise ValueError("all responses must share order and sample rate")

    @property
    def source_count(self) -> int:
        return len(self.responses)

    @property
    def order(self) -> int:
        return self.responses[0].order

    @property
    def sample_rate(self) -> int:
        return self.responses[0].sample_rate


def encode_anechoic(
    sources: Sequence[tuple[MonoBuffer, Direction]], order: int
) -> AmbisonicsBuffer:
    """Instantaneous far-field mix: sum of s_k(t) y_N(theta_k)."""
    if not sources:
        raise ValueError("no sources to encode")
    if order < 0:
        raise ValueError("order must be >= 0")
    rate = sources[0][0].sample_rate
    length = len(sources[0][0])
    for buf, _ in sources:
        if buf.sample_rate != rate:
            raise ValueError("sources have mismatched sample rates")
        if len(buf) != length:
            raise ValueError("sources have mismatched lengths")
    gains = np.stack([sh_eval(order, d) for _, d in sources], axis=1)
    signals = np.stack([buf.samples for buf, _ in sources], axis=0)
    return AmbisonicsBuffer(gains @ signals, order, rate)


def convolve(x: np.ndarray, h: np.ndarray, method: str = "auto") -> np.ndarray:
    """Full linear convolution of a 1-D signal with one or more kernels.

    ``h`` may be (taps,) or (channels, taps); direct summation is used for
    short kernels and FFT overlap-add for long ones.
    """
    x = np.asarray(x, dtype=float)
    h = np.atleast_2d(np.asarray(h, dtype=float))
    if method == "auto":
        method = "fft" if h.shape[-1] >= FFT_THRESHOLD else "direct"
    if method == "direct":
        out = np.stack([np.convolve(x, hc) for hc in h])
    elif method == "fft":
        out = signal.oaconvolve(x[None, :], h, axes=-1)
    else:
        raise ValueError(f"unknown convolution method {method!r}")
    return out


def encode_convolutive(
    sources: Sequence[MonoBuffer], arirs: ArirSet, method: str = "auto"
) -> AmbisonicsBuffer:
    """Convolutive mix sum_k s_k * h_k, trimmed to the dry-signal length."""
    if not sources:
        raise ValueError("no sources to encode")
    if len(sources) != arirs.source_count:
        raise ValueError(
            f"{len(sources)} sources but {arirs.source_count} room responses"
        )
    rate = sources[0].sample_rate
    length = len(sources[0])
    if arirs.sample_rate != rate:
        raise ValueError("room responses and sources have different sample rates")
    out = np.zeros((n_channels(arirs.order), length))
    for src, rir in zip(sources, arirs.responses):
        if src.sample_rate != rate or len(src) != length:
            raise ValueError("sources have mismatched sample rates or lengths")
        wet = convolve(src.samples, rir.data, method=method)
        out += wet[:, :length]
    return AmbisonicsBuffer(out, arirs.order, rate)


def sn3d_factors(order: int) -> np.ndarray:
    """Per-channel factor taking orthonormal SH to AmbiX SN3D.

    Orthonormal Y_n^m = sqrt((2n+1)/(4 pi)) * SN3D Y_n^m, hence the ratio
    depends on n only.
    """
    n = channel_orders(order)
    return np.sqrt(4.0 * math.pi / (2 * n + 1))


def convert_convention(buf: AmbisonicsBuffer, target: str) -> AmbisonicsBuffer:
    if target not in CONVENTIONS:
        raise ValueError(f"unknown convention {target!r}")
    if target == buf.convention:
        return AmbisonicsBuffer(buf.data.copy(), buf.order, buf.sample_rate, target)
    factors = sn3d_factors(buf.order)
    if target == "ambix_sn3d":
        data = buf.data * factors[:, None]
    else:
        data = buf.data / factors[:, None]
    return AmbisonicsBuffer(data, buf.order, buf.sample_rate, target)
