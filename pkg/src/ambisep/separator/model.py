"""Direction-conditioned waveform encoder/decoder (Demucs-style).

Each encoder level is a strided convolution (kernel 8, stride 4) followed
by ReLU and a 1x1 convolution with GLU; the decoder mirrors it with
transposed convolutions and adds the encoder outputs as skip connections.
A bidirectional LSTM and a linear map sit at the bottleneck. In the
``implicit`` and ``mixed`` modes the scaled target direction enters every
convolution through a learned bias-free linear projection.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
import torch
from torch import nn
from torch.nn import functional as F

from ..beamform import apply_beamformer, max_re_weights
from ..encode import AmbisonicsBuffer, MonoBuffer
from ..sh import Direction, n_channels

MODES = ("refinement", "implicit", "mixed")


@dataclass
class ModelConfig:
    mode: str = "implicit"
    ambi_order: int = 4
    depth: int = 6
    channels: int = 64
    kernel: int = 8
    stride: int = 4
    lstm_layers: int = 2
    cond_dim: int = 2
    growth: int = 2
    sample_rate: int = 16000

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}; expected one of {MODES}")
        if self.depth < 1:
            raise ValueError("depth must be >= 1")
        if self.kernel != 8 or self.stride != 4:
            raise ValueError("kernel 8 and stride 4 are fixed for this architecture")
        if self.mode == "mixed" and self.ambi_order < 1:
            raise ValueError("mixed mode needs an Ambisonics order >= 1")
        if self.cond_dim != 2:
            raise ValueError("the direction condition is two-dimensional")

    @property
    def in_channels(self) -> int:
        if self.mode == "refinement":
            return 1
        if self.mode == "implicit":
            return n_channels(self.ambi_order)
        return 5

    @property
    def conditioned(self) -> bool:
        return self.mode != "refinement"

    def level_channels(self) -> list[int]:
        return [self.channels * self.growth ** q for q in range(self.depth)]

    @classmethod
    def toy(cls, mode: str = "implicit", ambi_order: int = 1, **kw) -> "ModelConfig":
        kw.setdefault("depth", 3)
        kw.setdefault("channels", 8)
        return cls(mode=mode, ambi_order=ambi_order, **kw)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


def expected_param_count(config: ModelConfig) -> int:
    """Closed-form parameter count.

    Per encoder level q with input width c_in and width c:
    ``c_in*c*K + c`` (strided conv) + ``2c*c + 2c`` (1x1 conv), plus
    ``2*c + 2*2c`` conditioning weights when conditioned. Per decoder
    level with output width c_out: ``2c*c + 2c`` + ``c*c_out*K + c_out``,
    plus ``2*2c + 2*c_out`` conditioning weights. The bottleneck LSTM of
    hidden width H has ``4H(in + H) + 8H`` weights per layer and direction
    (in = H for the first layer, 2H after), followed by a ``2H -> H``
    linear map.
    """
    K = config.kernel
    chans = config.level_channels()
    cond = 2 if config.conditioned else 0
    total = 0
    c_in = config.in_channels
    for c in chans:
        total += c_in * c * K + c + 2 * c * c + 2 * c + cond * (c + 2 * c)
        c_in = c
    H = chans[-1]
    for layer in range(config.lstm_layers):
        inp = H if layer == 0 else 2 * H
        total += 2 * (4 * H * (inp + H) + 8 * H)
    total += 2 * H * H + H
    for q, c in enumerate(chans):
        c_out = 1 if q == 0 else chans[q - 1]
        total += 2 * c * c + 2 * c + c * c_out * K + c_out + cond * (2 * c + c_out)
    return total


def valid_length(length: int, depth: int, kernel: int = 8, stride: int = 4) -> int:
    """Smallest length >= ``length`` that the encoder/decoder maps onto itself."""
    base = 1
    for _ in range(depth):
        base = (base - 1) * stride + kernel
    period = stride ** depth
    b = max(1, math.ceil((length - base) / period) + 1)
    return base + (b - 1) * period


class _EncoderLevel(nn.Module):
    def __init__(self, c_in: int, c: int, kernel: int, stride: int, conditioned: bool):
        super().__init__()
        self.conv = nn.Conv1d(c_in, c, kernel, stride)
        self.pointwise = nn.Conv1d(c, 2 * c, 1)
        self.cond_conv = nn.Linear(2, c, bias=False) if conditioned else None
        self.cond_pointwise = nn.Linear(2, 2 * c, bias=False) if conditioned else None

    def forward(self, x, cond):
        h = self.conv(x)
        if self.cond_conv is not None:
            h = h + self.cond_conv(cond)[:, :, None]
        h = self.pointwise(F.relu(h))
        if self.cond_pointwise is not None:
            h = h + self.cond_pointwise(cond)[:, :, None]
        out = F.glu(h, dim=1)
        assert out.shape[1] * 2 == h.shape[1]
        return out


class _DecoderLevel(nn.Module):
    def __init__(self, c: int, c_out: int, kernel: int, stride: int, conditioned: bool, last: bool):
        super().__init__()
        self.pointwise = nn.Conv1d(c, 2 * c, 1)
        self.deconv = nn.ConvTranspose1d(c, c_out, kernel, stride)
        self.cond_pointwise = nn.Linear(2, 2 * c, bias=False) if conditioned else None
        self.cond_deconv = nn.Linear(2, c_out, bias=False) if conditioned else None
        self.last = last

    def forward(self, x, cond):
        h = self.pointwise(x)
        if self.cond_pointwise is not None:
            h = h + self.cond_pointwise(cond)[:, :, None]
        g = F.glu(h, dim=1)
        assert g.shape[1] * 2 == h.shape[1]
        h = self.deconv(g)
        if self.cond_deconv is not None:
            h = h + self.cond_deconv(cond)[:, :, None]
        return h if self.last else F.relu(h)


class _Bottleneck(nn.Module):
    def __init__(self, dim: int, layers: int):
        super().__init__()
        self.lstm = nn.LSTM(dim, dim, num_layers=layers, bidirectional=True)
        self.linear = nn.Linear(2 * dim, dim)

    def forward(self, x):
        y = x.permute(2, 0, 1)
        y, _ = self.lstm(y)
        y = self.linear(y)
        return y.permute(1, 2, 0)


class DirectionalDemucs(nn.Module):
    """Single-output separation network for one target direction."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        chans = config.level_channels()
        K, S = config.kernel, config.stride
        self.encoder = nn.ModuleList()
        c_in = config.in_channels
        for c in chans:
            self.encoder.append(_EncoderLevel(c_in, c, K, S, config.conditioned))
            c_in = c
        self.bottleneck = _Bottleneck(chans[-1], config.lstm_layers)
        self.decoder = nn.ModuleList()
        for q in reversed(range(config.depth)):
            c_out = 1 if q == 0 else chans[q - 1]
            self.decoder.append(_DecoderLevel(chans[q], c_out, K, S, config.conditioned, last=q == 0))

    def valid_length(self, length: int) -> int:
        return valid_length(length, self.config.depth, self.config.kernel, self.config.stride)

    def forward(self, x: torch.Tensor, cond: torch.Tensor | None = None) -> torch.Tensor:
        """Map (B, C_in, T) tracks and (B, 2) conditions to a (B, 1, T) estimate."""
        if x.dim() != 3 or x.shape[1] != self.config.in_channels:
            raise ValueError(
                f"expected (batch, {self.config.in_channels}, time) input, got {tuple(x.shape)}"
            )
        if self.config.conditioned:
            if cond is None or cond.shape != (x.shape[0], 2):
                raise ValueError("conditioned modes need a (batch, 2) condition")
            cond = cond.to(x.dtype)
        length = x.shape[-1]
        pad = self.valid_length(length) - length
        x = F.pad(x, (pad, 0))
        skips = []
        for level in self.encoder:
            x = level(x, cond)
            skips.append(x)
        x = self.bottleneck(x)
        for level in self.decoder:
            x = level(x + skips.pop(), cond)
        return x[..., pad:]


def build_model(config: ModelConfig, seed: int = 0) -> DirectionalDemucs:
    """Construct a network with seeded fan-in-scaled uniform initialization."""
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        model = DirectionalDemucs(config)
    return model


@dataclass(frozen=True)
class ScaledDirection:
    az_scaled: float
    zen_scaled: float

    def as_array(self) -> np.ndarray:
        return np.array([self.az_scaled, self.zen_scaled])


def scale_direction(direction: Direction) -> ScaledDirection:
    """Map azimuth [-pi, pi] and zenith [0, pi] linearly onto [-1, 1]."""
    return ScaledDirection(direction.azimuth / math.pi, 2.0 * direction.zenith / math.pi - 1.0)


@dataclass
class AssembledInput:
    tracks: np.ndarray
    condition: ScaledDirection | None
    scale: float
    silent: bool = False


def assemble_input(mode: str, mix: AmbisonicsBuffer, target: Direction) -> AssembledInput:
    """Build the network input for one target direction.

    ``scale`` is the standard deviation the tracks were divided by (the
    beam output in refinement mode, the omni channel otherwise); training
    targets are divided by the same value.
    """
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}")
    if mix.convention != "orthonormal":
        raise ValueError("network input must be in the orthonormal convention")
    if mode == "refinement":
        raw = apply_beamformer(max_re_weights(mix.order, target), mix).samples[None, :]
        std = float(np.std(raw[0]))
        cond = None
    else:
        if mode == "implicit":
            raw = mix.data
        else:
            if mix.order < 1:
                raise ValueError("mixed mode needs an Ambisonics order >= 1")
            beam = apply_beamformer(max_re_weights(mix.order, target), mix).samples
            raw = np.concatenate([mix.data[:4], beam[None, :]], axis=0)
        std = float(np.std(mix.data[0]))
        cond = scale_direction(target)
    if not std > 1e-12:
        return AssembledInput(np.zeros_like(raw), cond, 1.0, silent=True)
    return AssembledInput(raw / std, cond, std)


def _to_batch(model: DirectionalDemucs, inputs: list[AssembledInput]):
    dtype = next(model.parameters()).dtype
    x = torch.as_tensor(np.stack([a.tracks for a in inputs]), dtype=dtype)
    cond = None
    if model.config.conditioned:
        cond = torch.as_tensor(np.stack([a.condition.as_array() for a in inputs]), dtype=dtype)
    return x, cond


def forward(model: DirectionalDemucs, tracks: np.ndarray, condition: ScaledDirection | None) -> np.ndarray:
    """Run the network on one (C_in, T) array; returns the (T,) estimate."""
    inp = AssembledInput(np.asarray(tracks, dtype=float), condition, 1.0)
    x, cond = _to_batch(model, [inp])
    with torch.no_grad():
        y = model(x, cond)
    return y[0, 0].double().numpy()


def separate(model: DirectionalDemucs, mix: AmbisonicsBuffer, target: Direction) -> MonoBuffer:
    """Estimate the signal arriving from ``target``.

    The estimate stays on the standardized input scale.
    """
    cfg = model.config
    if mix.order != cfg.ambi_order:
        raise ValueError(f"model expects order {cfg.ambi_order}, mixture is order {mix.order}")
    inp = assemble_input(cfg.mode, mix, target)
    if inp.silent:
        return MonoBuffer(np.zeros(mix.n_samples), mix.sample_rate)
    return MonoBuffer(forward(model, inp.tracks, inp.condition), mix.sample_rate)


def separate_many(model: DirectionalDemucs, mix: AmbisonicsBuffer, targets: list[Direction],
                  batch_size: int = 16) -> list[MonoBuffer]:
    """Batched :func:`separate` over several target directions."""
    cfg = model.config
    if mix.order != cfg.ambi_order:
        raise ValueError(f"model expects order {cfg.ambi_order}, mixture is order {mix.order}")
    out: list[MonoBuffer] = []
    for i in range(0, len(targets), batch_size):
        chunk = [assemble_input(cfg.mode, mix, t) for t in targets[i:i + batch_size]]
        live = [a for a in chunk if not a.silent]
        est = []
        if live:
            x, cond = _to_batch(model, live)
            with torch.no_grad():
                est = list(model(x, cond)[:, 0].double().numpy())
        for a in chunk:
            samples = np.zeros(mix.n_samples) if a.silent else est.pop(0)
            out.append(MonoBuffer(samples, mix.sample_rate))
    return out


def l1_loss(estimate, truth) -> float:
    """Mean absolute error."""
    e = estimate.samples if isinstance(estimate, MonoBuffer) else np.asarray(estimate, dtype=float)
    t = truth.samples if isinstance(truth, MonoBuffer) else np.asarray(truth, dtype=float)
    if e.shape != t.shape:
        raise ValueError("estimate and truth lengths differ")
    return float(np.mean(np.abs(e - t)))
