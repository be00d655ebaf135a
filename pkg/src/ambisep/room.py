"""Shoebox room simulation producing SH-domain directional impulse responses.

Early reflections come from the image-source method; their octave-band
gains follow from Eyring's formula for the requested reverberation times.
After the mixing time the response is crossfaded into isotropic diffuse
noise decaying exponentially per octave band.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import fft as sp_fft
from scipy import signal as sp_signal

from .encode import AmbisonicsBuffer
from .sh import Direction, n_channels, sh_matrix

OCTAVE_BANDS = (125.0, 250.0, 500.0, 1000.0, 2000.0, 4000.0, 8000.0)
DIMENSION_RANGES = ((1.0, 5.0), (2.0, 6.0), (2.0, 4.0))
RT60_RANGE = (0.1, 0.5)
WALL_CLEARANCE = 0.1
# half-width in octaves of the cos^2 crossover between adjacent bands
CROSSOVER_HALF_WIDTH = 0.1
FADE_SECONDS = 0.010
# band-limit / unit-envelope alternations used to condition the tail noise
ENVELOPE_ITERATIONS = 10
MATCH_WINDOW_SECONDS = 0.005


@dataclass
class RoomSpec:
    dims: np.ndarray
    rt60: np.ndarray
    source_positions: list[np.ndarray]
    receiver_position: np.ndarray
    sample_rate: int = 16000
    speed_of_sound: float = 343.0

    def __post_init__(self):
        self.dims = np.asarray(self.dims, dtype=float).reshape(3)
        self.rt60 = np.asarray(self.rt60, dtype=float).reshape(len(OCTAVE_BANDS))
        self.source_positions = [np.asarray(p, dtype=float).reshape(3) for p in self.source_positions]
        self.receiver_position = np.asarray(self.receiver_position, dtype=float).reshape(3)
        if np.any(self.dims <= 0):
            raise ValueError("room dimensions must be positive")
        if np.any(self.rt60 <= 0):
            raise ValueError("reverberation times must be positive")
        for p in self.source_positions + [self.receiver_position]:
            if np.any(p < WALL_CLEARANCE - 1e-9) or np.any(p > self.dims - WALL_CLEARANCE + 1e-9):
                raise ValueError(f"position {p.tolist()} violates the {WALL_CLEARANCE} m wall clearance")

    @property
    def volume(self) -> float:
        return float(np.prod(self.dims))

    @property
    def surface(self) -> float:
        x, y, z = self.dims
        return float(2 * (x * y + x * z + y * z))

    def source_direction(self, index: int) -> Direction:
        return Direction.from_vector(self.source_positions[index] - self.receiver_position)

    def to_dict(self) -> dict:
        return {
            "dims": self.dims.tolist(),
            "rt60": self.rt60.tolist(),
            "source_positions": [p.tolist() for p in self.source_positions],
            "receiver_position": self.receiver_position.tolist(),
            "sample_rate": self.sample_rate,
            "speed_of_sound": self.speed_of_sound,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RoomSpec":
        known = {"dims", "rt60", "source_positions", "receiver_position", "sample_rate", "speed_of_sound"}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown RoomSpec keys: {sorted(unknown)}")
        return cls(**d)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "RoomSpec":
        return cls.from_dict(json.loads(text))


@dataclass
class ImageSource:
    direction: Direction
    distance: float
    band_gains: np.ndarray
    reflection_order: int
    position: np.ndarray = field(repr=False, default=None)


def random_position(dims: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    return rng.uniform(WALL_CLEARANCE, np.asarray(dims) - WALL_CLEARANCE)


def sample_room(seed, n_sources: int = 1, sample_rate: int = 16000) -> RoomSpec:
    """Draw a random room: dims (3+-2, 4+-2, 3+-1) m, band RT60 0.3+-0.2 s."""
    rng = np.random.default_rng(seed)
    dims = np.array([rng.uniform(lo, hi) for lo, hi in DIMENSION_RANGES])
    rt60 = rng.uniform(*RT60_RANGE, size=len(OCTAVE_BANDS))
    receiver = random_position(dims, rng)
    sources = [random_position(dims, rng) for _ in range(n_sources)]
    return RoomSpec(dims, rt60, sources, receiver, sample_rate)


def eyring_reflection(volume, surface, rt60):
    """Amplitude reflection coefficient from Eyring's reverberation formula.

    alpha = 1 - exp(-0.163 V / (S T)), beta = sqrt(1 - alpha).
    """
    volume = np.asarray(volume, dtype=float)
    surface = np.asarray(surface, dtype=float)
    rt60 = np.asarray(rt60, dtype=float)
    if np.any(volume <= 0) or np.any(surface <= 0) or np.any(rt60 <= 0):
        raise ValueError("volume, surface and rt60 must be positive")
    beta = np.exp(-0.0815 * volume / (surface * rt60))
    return float(beta) if beta.ndim == 0 else beta


def mixing_time(volume: float) -> float:
    """Mixing time sqrt(V)/500 in seconds."""
    return math.sqrt(volume) / 500.0


def image_lattice(room: RoomSpec, src_index: int, max_order: int = 6) -> tuple[np.ndarray, np.ndarray]:
    """Image positions (M, 3) and reflection counts (M,) of one source.

    Along each axis the image coordinate is (1 - 2p) s + 2 u L, reached
    after |2u - p| wall reflections.
    """
    src = room.source_positions[src_index]
    per_axis = []
    for axis in range(3):
        L, s = room.dims[axis], src[axis]
        entries = []
        for u in range(-max_order, max_order + 1):
            for p in (0, 1):
                count = abs(2 * u - p)
                if count <= max_order:
                    entries.append(((1 - 2 * p) * s + 2 * u * L, count))
        per_axis.append(entries)
    positions, orders = [], []
    for x, cx in per_axis[0]:
        for y, cy in per_axis[1]:
            if cx + cy > max_order:
                continue
            for z, cz in per_axis[2]:
                total = cx + cy + cz
                if total <= max_order:
                    positions.append((x, y, z))
                    orders.append(total)
    positions = np.array(positions)
    orders = np.array(orders)
    sort = np.lexsort((positions[:, 2], positions[:, 1], positions[:, 0], orders))
    return positions[sort], orders[sort]


def image_sources(room: RoomSpec, src_index: int, max_order: int = 6) -> list[ImageSource]:
    positions, orders = image_lattice(room, src_index, max_order)
    beta = eyring_reflection(room.volume, room.surface, room.rt60)
    out = []
    for pos, k in zip(positions, orders):
        rel = pos - room.receiver_position
        out.append(ImageSource(
            direction=Direction.from_vector(rel),
            distance=float(np.linalg.norm(rel)),
            band_gains=beta ** int(k),
            reflection_order=int(k),
            position=pos,
        ))
    return out


def band_masks(freqs: np.ndarray, half_width: float = CROSSOVER_HALF_WIDTH) -> np.ndarray:
    """Zero-phase octave-band magnitude responses summing to exactly one.

    Adjacent bands cross over with complementary cos^2 ramps in log
    frequency; the lowest band extends to DC and the highest to Nyquist.
    """
    freqs = np.asarray(freqs, dtype=float)
    with np.errstate(divide="ignore"):
        u = np.log2(np.where(freqs > 0, freqs, 1e-30))
    centers = np.log2(np.array(OCTAVE_BANDS))
    crossovers = centers[:-1] + 0.5
    lows = []
    for uc in crossovers:
        t = np.clip((u - uc) / half_width, -1.0, 1.0)
        lows.append(np.cos(np.pi / 4 * (1.0 + t)) ** 2)
    masks = np.empty((len(OCTAVE_BANDS),) + freqs.shape)
    remainder = np.ones_like(u)
    for b in range(len(OCTAVE_BANDS) - 1):
        masks[b] = remainder * lows[b]
        remainder = remainder * (1.0 - lows[b])
    masks[-1] = remainder
    return masks


def tail_band_masks(freqs: np.ndarray, half_width: float = CROSSOVER_HALF_WIDTH) -> np.ndarray:
    """Disjoint band supports for the diffuse tail.

    Band b is flat within +-(0.5 - 2 h) octaves of its center and rolls off
    to zero where the crossover ramps begin, so no two tail bands share a
    frequency and each lies where ``band_masks`` of its band equals one.
    """
    freqs = np.asarray(freqs, dtype=float)
    with np.errstate(divide="ignore"):
        u = np.log2(np.where(freqs > 0, freqs, 1e-30))
    centers = np.log2(np.array(OCTAVE_BANDS))
    edge = 0.5 - half_width
    flat = 0.5 - 2 * half_width
    masks = np.empty((len(OCTAVE_BANDS),) + freqs.shape)
    for b, c in enumerate(centers):
        d = u - c
        if b == 0:
            d = np.maximum(d, 0.0)
        if b == len(centers) - 1:
            d = np.minimum(d, 0.0)
        ramp = np.clip((np.abs(d) - flat) / (edge - flat), 0.0, 1.0)
        masks[b] = np.cos(np.pi / 2 * ramp) ** 2
    return masks


def flat_envelope_noise(noise: np.ndarray, masks: np.ndarray, nfft: int,
                        iterations: int = ENVELOPE_ITERATIONS) -> np.ndarray:
    """Band-limited noise with a nearly constant envelope in every band.

    Each band of ``noise`` (..., T) is alternately projected onto the band
    and onto unit analytic-signal magnitude. Plain Gaussian band noise has
    Rayleigh-distributed energy fluctuations that make the decay of narrow
    low-frequency bands wander far from the target reverberation time.
    Returns (bands, ..., T), each band scaled to unit mean power.
    """
    T = noise.shape[-1]
    out = []
    for b in range(masks.shape[0]):
        x = noise
        for _ in range(iterations):
            x = sp_fft.irfft(masks[b] * sp_fft.rfft(x, n=nfft, axis=-1), n=nfft, axis=-1)[..., :T]
            analytic = sp_signal.hilbert(x, axis=-1)
            x = np.real(analytic / np.maximum(np.abs(analytic), 1e-300))
        x = sp_fft.irfft(masks[b] * sp_fft.rfft(x, n=nfft, axis=-1), n=nfft, axis=-1)[..., :T]
        power = float(np.mean(x * x))
        out.append(x / math.sqrt(power) if power > 0 else x)
    return np.stack(out)


def default_duration(room: RoomSpec, src_index: int, align_direct: bool = False) -> float:
    direct = float(np.linalg.norm(room.source_positions[src_index] - room.receiver_position))
    lead = 0.0 if align_direct else direct / room.speed_of_sound
    return lead + mixing_time(room.volume) + float(np.max(room.rt60)) + 0.05


def render_drir(
    room: RoomSpec,
    src_index: int,
    order: int,
    duration: float | None = None,
    seed: int = 0,
    max_order: int = 6,
    tail: bool = True,
    normalize: bool = True,
    align_direct: bool = False,
) -> AmbisonicsBuffer:
    """Render the SH-domain impulse response of one source.

    Parameters
    ----------
    duration : float, optional
        Length in seconds; must cover the direct delay, the mixing time and
        the longest band RT60. Defaults to just that plus 50 ms.
    seed : int
        Master seed; the diffuse tail draws from a stream keyed on
        ``(seed, src_index)``.
    tail : bool
        Crossfade into the diffuse tail at the mixing time.
    normalize : bool
        Scale so the direct path has unit gain before SH encoding.
    align_direct : bool
        Drop the propagation delay so the direct path lands on sample 0.
    """
    fs = room.sample_rate
    c = room.speed_of_sound
    positions, orders = image_lattice(room, src_index, max_order)
    rel = positions - room.receiver_position
    dist = np.linalg.norm(rel, axis=1)
    delays = np.rint(dist / c * fs).astype(int)
    direct_delay = int(delays[0])
    if align_direct:
        delays = delays - direct_delay
        direct_delay = 0
    t_mix = mixing_time(room.volume)
    if duration is None:
        duration = default_duration(room, src_index, align_direct)
    needed = direct_delay / fs + t_mix + float(np.max(room.rt60))
    if duration < needed - 1e-12:
        raise ValueError(f"duration {duration:.3f} s shorter than required {needed:.3f} s")
    T = int(math.ceil(duration * fs))
    n_ch = n_channels(order)

    beta = eyring_reflection(room.volume, room.surface, room.rt60)
    gains = beta[None, :] ** orders[:, None] / dist[:, None]
    Y = sh_matrix(order, np.arctan2(rel[:, 1], rel[:, 0]),
                  np.arccos(np.clip(rel[:, 2] / dist, -1.0, 1.0)))

    out = np.zeros((n_ch, T))
    out[:, direct_delay] = gains[0, 0] * Y[0]

    keep = (orders > 0) & (delays < T)
    nfft = sp_fft.next_fast_len(2 * T)
    masks = band_masks(np.fft.rfftfreq(nfft, 1.0 / fs))
    n_bands = len(OCTAVE_BANDS)
    refl_omni = np.zeros((n_bands, T))
    if np.any(keep):
        trains = np.zeros((n_bands, n_ch, T))
        idx = np.nonzero(keep)[0]
        for b in range(n_bands):
            np.add.at(trains[b].T, delays[idx], gains[idx, b, None] * Y[idx])
        spec = sp_fft.rfft(trains, n=nfft, axis=-1)
        early = sp_fft.irfft(np.einsum("bf,bcf->cf", masks, spec), n=nfft, axis=-1)[:, :T]
        refl_omni = sp_fft.irfft(masks * spec[:, 0, :], n=nfft, axis=-1)[:, :T]
        out += early
    # the zero-phase band filters ring ahead of each reflection
    out[:, :direct_delay] = 0.0

    if tail:
        start = direct_delay + int(round(t_mix * fs))
        rng = np.random.default_rng([seed, src_index])
        noise = rng.standard_normal((n_ch, T))
        bands = flat_envelope_noise(noise, tail_band_masks(np.fft.rfftfreq(nfft, 1.0 / fs)), nfft)
        power = np.zeros(n_bands)
        for b in range(n_bands):
            # at least four periods so low bands get a usable energy estimate
            win = max(1, int(round(max(MATCH_WINDOW_SECONDS, 4.0 / OCTAVE_BANDS[b]) * fs)))
            lo = max(start - win, direct_delay + 1)
            if lo >= start:
                continue
            seg = refl_omni[b, lo:start]
            # energy envelope expected to decay with the band RT60
            decay = np.exp(-13.816 * (np.arange(lo, start) - start) / fs / room.rt60[b])
            power[b] = float(seg @ seg) / float(np.sum(decay))
        t = (np.arange(T) - start) / fs
        late = np.zeros((n_ch, T))
        for b in range(n_bands):
            if power[b] <= 0.0:
                continue
            env = np.exp(-6.908 * t / room.rt60[b])
            late += bands[b] * (math.sqrt(power[b]) * env)
        half = int(round(FADE_SECONDS * fs / 2))
        fade = np.zeros(T)
        ramp_t = np.arange(start - half, start + half)
        valid = (ramp_t >= 0) & (ramp_t < T)
        fade[ramp_t[valid]] = 0.5 * (1.0 - np.cos(np.pi * (ramp_t[valid] - (start - half)) / (2 * half)))
        fade[max(0, start + half):] = 1.0
        fade[: direct_delay + 1] = 0.0
        out = out * (1.0 - fade) + late * fade

    if normalize:
        out = out * dist[0]
    return AmbisonicsBuffer(out, order, fs)


def render_arirs(room: RoomSpec, order: int, duration: float | None = None, seed: int = 0,
                 align_direct: bool = False, **kwargs):
    """DRIRs for every source of ``room`` as an ArirSet."""
    from .encode import ArirSet

    if duration is None:
        duration = max(default_duration(room, i, align_direct) for i in range(len(room.source_positions)))
    return ArirSet([
        render_drir(room, i, order, duration, seed=seed, align_direct=align_direct, **kwargs)
        for i in range(len(room.source_positions))
    ])
