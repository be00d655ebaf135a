"""Scene composition from a user-supplied corpus of mono stems.

A corpus is a directory of mono WAV files laid out as
``<root>/<split>/<group>/<label>.wav`` (split is train/valid/test, group
identifies a song or recording, label the stem type), or any layout
described by an ``index.json`` at the root. Scenes are described by
:class:`SceneSpec` records that can be stored in a JSON manifest and
rendered again bit-identically.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .audio_io import read_mono, read_wav
from .encode import AmbisonicsBuffer, MonoBuffer, encode_anechoic, encode_convolutive
from .room import RoomSpec, WALL_CLEARANCE, render_arirs, sample_room
from .sh import Direction, uniform_directions, unit_vectors

SPLITS = ("train", "valid", "test")
MUSDB_LABELS = ("drums", "bass", "vocals")
SILENCE_RMS = 1e-6
DIRECTION_ATTEMPTS = 10_000
SCENE_ATTEMPTS = 1_000
PEAK_LIMIT = 0.99
MANIFEST_VERSION = 1


class CorpusError(RuntimeError):
    """The corpus cannot satisfy a request (missing stems, exhausted retries)."""


@dataclass(frozen=True)
class StemEntry:
    id: str
    path: str
    duration: float
    sample_rate: int
    split: str
    group: str
    label: str = ""


class StemCorpus:
    """Indexed collection of mono stems sharing one sample rate."""

    def __init__(self, root, entries: Sequence[StemEntry]):
        self.root = Path(root)
        self.entries = list(entries)
        self._by_id = {e.id: e for e in self.entries}
        if len(self._by_id) != len(self.entries):
            raise ValueError("duplicate stem ids in corpus")
        rates = {e.sample_rate for e in self.entries}
        if len(rates) > 1:
            raise ValueError(f"corpus mixes sample rates {sorted(rates)}")
        for e in self.entries:
            if e.split not in SPLITS:
                raise ValueError(f"stem {e.id}: unknown split {e.split!r}")
        self._cache: dict[str, np.ndarray] = {}

    @property
    def sample_rate(self) -> int:
        if not self.entries:
            raise CorpusError("empty corpus")
        return self.entries[0].sample_rate

    def __len__(self) -> int:
        return len(self.entries)

    def __getitem__(self, stem_id: str) -> StemEntry:
        return self._by_id[stem_id]

    def split(self, name: str) -> list[StemEntry]:
        return [e for e in self.entries if e.split == name]

    def audio(self, stem_id: str) -> np.ndarray:
        if stem_id not in self._cache:
            entry = self._by_id[stem_id]
            self._cache[stem_id] = read_mono(self.root / entry.path).samples
        return self._cache[stem_id]

    def segment(self, stem_id: str, start: float, duration: float) -> np.ndarray:
        rate = self.sample_rate
        i0 = int(round(start * rate))
        n = int(round(duration * rate))
        data = self.audio(stem_id)
        if i0 < 0 or i0 + n > data.shape[0]:
            raise CorpusError(f"segment [{start}, {start + duration}) s outside stem {stem_id}")
        return data[i0:i0 + n]

    @classmethod
    def from_directory(cls, root) -> "StemCorpus":
        root = Path(root)
        index = root / "index.json"
        if index.exists():
            raw = json.loads(index.read_text())
            return cls(root, [StemEntry(**e) for e in raw["entries"]])
        entries = []
        for path in sorted(root.glob("*/*/*.wav")):
            split, group = path.parent.parent.name, path.parent.name
            if split not in SPLITS:
                continue
            data, rate = read_wav(path)
            if data.shape[0] != 1:
                raise ValueError(f"{path}: stems must be mono")
            entries.append(StemEntry(
                id=f"{split}/{group}/{path.stem}",
                path=str(path.relative_to(root)),
                duration=data.shape[1] / rate,
                sample_rate=rate,
                split=split,
                group=group,
                label=path.stem,
            ))
        if not entries:
            raise CorpusError(f"no stems found under {root}")
        return cls(root, entries)

    def write_index(self) -> Path:
        path = self.root / "index.json"
        doc = {"entries": [e.__dict__ for e in self.entries]}
        path.write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")
        return path


@dataclass
class ScenePolicy:
    """How scenes are drawn from a corpus.

    ``style`` is ``"musdb"`` (one stem per label), ``"fuss"`` (1 to
    ``max_sources`` arbitrary stems) or ``"fixed"`` (exactly ``n_sources``).
    """

    style: str = "musdb"
    split: str = "train"
    n_sources: int = 3
    labels: tuple[str, ...] = MUSDB_LABELS
    max_sources: int = 4
    min_active: int = 1
    silent_fraction: float = 0.3
    same_group: bool = False
    segment: float = 6.0
    min_separation_deg: float = 5.0
    acoustics: str = "anechoic"
    order: int = 4

    def __post_init__(self):
        if self.style not in ("musdb", "fuss", "fixed"):
            raise ValueError(f"unknown scene style {self.style!r}")
        if self.split not in SPLITS:
            raise ValueError(f"unknown split {self.split!r}")
        if self.acoustics not in ("anechoic", "room"):
            raise ValueError(f"unknown acoustics {self.acoustics!r}")
        if not 0.0 <= self.silent_fraction <= 1.0:
            raise ValueError("silent_fraction must be within [0, 1]")
        self.labels = tuple(self.labels)

    @classmethod
    def musdb(cls, split: str = "train", **kw) -> "ScenePolicy":
        test = split == "test"
        kw.setdefault("silent_fraction", 0.0 if test else 0.3)
        kw.setdefault("same_group", test)
        return cls(style="musdb", split=split, **kw)

    @classmethod
    def fuss(cls, split: str = "train", **kw) -> "ScenePolicy":
        kw.setdefault("silent_fraction", 0.0)
        kw.setdefault("min_active", 2 if split == "test" else 1)
        return cls(style="fuss", split=split, **kw)

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        d["labels"] = list(self.labels)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ScenePolicy":
        return cls(**d)


@dataclass
class SceneSource:
    stem_id: str
    start: float
    direction: Direction
    active: bool = True


@dataclass
class SceneSpec:
    scene_id: str
    sources: list[SceneSource]
    duration: float = 6.0
    acoustics: str = "anechoic"
    room: RoomSpec | None = None
    order: int = 4
    seed: int = 0
    sample_rate: int = 16000

    @property
    def directions(self) -> list[Direction]:
        return [s.direction for s in self.sources]

    @property
    def active_count(self) -> int:
        return sum(s.active for s in self.sources)

    def to_dict(self) -> dict:
        return {
            "scene_id": self.scene_id,
            "sources": [
                {"stem_id": s.stem_id, "start": s.start,
                 "direction": [s.direction.azimuth, s.direction.zenith], "active": s.active}
                for s in self.sources
            ],
            "duration": self.duration,
            "acoustics": self.acoustics,
            "room": None if self.room is None else self.room.to_dict(),
            "order": self.order,
            "seed": self.seed,
            "sample_rate": self.sample_rate,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SceneSpec":
        sources = [
            SceneSource(s["stem_id"], float(s["start"]), Direction(*s["direction"]), bool(s["active"]))
            for s in d["sources"]
        ]
        room = None if d.get("room") is None else RoomSpec.from_dict(d["room"])
        return cls(d["scene_id"], sources, float(d["duration"]), d["acoustics"], room,
                   int(d["order"]), int(d["seed"]), int(d["sample_rate"]))


@dataclass
class RenderedScene:
    mixture: AmbisonicsBuffer
    truths: list[MonoBuffer]
    meta: dict = field(default_factory=dict)

    def __iter__(self) -> Iterator:
        return iter((self.mixture, self.truths, self.meta))

    @property
    def directions(self) -> list[Direction]:
        return [Direction(*d) for d in self.meta["directions"]]

    @property
    def active(self) -> list[bool]:
        return list(self.meta["active"])


def sample_directions(k: int, rng: np.random.Generator, min_sep_deg: float = 5.0) -> list[Direction]:
    """Area-uniform directions, pairwise at least ``min_sep_deg`` apart."""
    if k < 1:
        raise ValueError("need at least one direction")
    if k > 100:
        raise ValueError("at most 100 directions can be sampled")
    cos_limit = math.cos(math.radians(min_sep_deg))
    chosen: list[np.ndarray] = []
    angles: list[tuple[float, float]] = []
    attempts = 0
    while len(chosen) < k:
        attempts += 1
        if attempts > DIRECTION_ATTEMPTS:
            raise CorpusError(f"could not place {k} directions {min_sep_deg} deg apart")
        az, zen = uniform_directions(1, rng)
        v = unit_vectors(az[0], zen[0])
        if all(float(v @ c) <= cos_limit for c in chosen):
            chosen.append(v)
            angles.append((float(az[0]), float(zen[0])))
    return [Direction(a, z) for a, z in angles]


def _random_start(entry: StemEntry, segment: float, rng: np.random.Generator) -> float:
    span = entry.duration - segment
    if span < 0:
        raise CorpusError(f"stem {entry.id} shorter than the {segment} s segment")
    # quantized to whole samples so manifests round-trip exactly
    return round(rng.uniform(0.0, span) * entry.sample_rate) / entry.sample_rate


def _pick_stems(corpus: StemCorpus, policy: ScenePolicy, rng: np.random.Generator) -> list[tuple[StemEntry, float]]:
    pool = corpus.split(policy.split)
    if not pool:
        raise CorpusError(f"no stems in split {policy.split!r}")
    seg = policy.segment
    if policy.style == "musdb":
        by_label = {lab: [e for e in pool if e.label == lab] for lab in policy.labels}
        missing = [lab for lab, es in by_label.items() if not es]
        if missing:
            raise CorpusError(f"split {policy.split!r} has no stems labelled {missing}")
        if policy.same_group:
            groups = sorted({e.group for e in pool
                             if all(any(x.group == e.group for x in by_label[lab]) for lab in policy.labels)})
            if not groups:
                raise CorpusError("no group contains every label")
            group = groups[rng.integers(len(groups))]
            members = [next(x for x in by_label[lab] if x.group == group) for lab in policy.labels]
            start = _random_start(min(members, key=lambda e: e.duration), seg, rng)
            return [(m, start) for m in members]
        picks = []
        for lab in policy.labels:
            es = by_label[lab]
            e = es[rng.integers(len(es))]
            picks.append((e, _random_start(e, seg, rng)))
        return picks
    if policy.style == "fuss":
        k = int(rng.integers(1, policy.max_sources + 1))
    else:
        k = policy.n_sources
    if k > len(pool):
        raise CorpusError(f"split {policy.split!r} has {len(pool)} stems, scene needs {k}")
    idx = rng.choice(len(pool), size=k, replace=False)
    return [(pool[i], _random_start(pool[i], seg, rng)) for i in idx]


def _place_in_room(room: RoomSpec, directions: Sequence[Direction], rng: np.random.Generator) -> RoomSpec:
    """Put one source along each direction, inside the room with wall clearance."""
    lo = np.full(3, WALL_CLEARANCE)
    hi = room.dims - WALL_CLEARANCE
    rx = room.receiver_position
    positions = []
    for d in directions:
        u = d.unit_vector
        with np.errstate(divide="ignore", invalid="ignore"):
            bounds = np.where(u > 0, (hi - rx) / u, np.where(u < 0, (lo - rx) / u, np.inf))
        t_max = float(np.min(bounds)) * (1 - 1e-9)
        t = rng.uniform(0.25, 1.0) * t_max
        positions.append(rx + t * u)
    return RoomSpec(room.dims, room.rt60, positions, rx, room.sample_rate, room.speed_of_sound)


def build_scene(corpus: StemCorpus, policy: ScenePolicy, rng: np.random.Generator,
                scene_id: str = "scene", seed: int = 0) -> SceneSpec:
    """Draw one scene; retries until enough sources are audible."""
    rate = corpus.sample_rate
    for _ in range(SCENE_ATTEMPTS):
        picks = _pick_stems(corpus, policy, rng)
        k = len(picks)
        active = [True] * k
        if k >= 2 and rng.random() < policy.silent_fraction:
            active[int(rng.integers(k))] = False
        if sum(active) < policy.min_active:
            continue
        audible = [
            a and float(np.sqrt(np.mean(corpus.segment(e.id, s, policy.segment) ** 2))) > SILENCE_RMS
            for (e, s), a in zip(picks, active)
        ]
        if sum(audible) < policy.min_active:
            continue
        total = sum(corpus.segment(e.id, s, policy.segment) for (e, s), a in zip(picks, active) if a)
        if float(np.sqrt(np.mean(total ** 2))) <= SILENCE_RMS:
            continue
        dirs = sample_directions(k, rng, policy.min_separation_deg)
        room = None
        if policy.acoustics == "room":
            base = sample_room(int(rng.integers(2**31)), n_sources=0, sample_rate=rate)
            room = _place_in_room(base, dirs, rng)
        sources = [SceneSource(e.id, s, d, a) for (e, s), d, a in zip(picks, dirs, active)]
        return SceneSpec(scene_id, sources, policy.segment, policy.acoustics, room,
                         policy.order, seed, rate)
    raise CorpusError(f"no audible scene after {SCENE_ATTEMPTS} attempts")


def generate_scenes(corpus: StemCorpus, policy: ScenePolicy, count: int, seed: int) -> list[SceneSpec]:
    """``count`` scenes, each drawn from its own stream keyed on (seed, index)."""
    scenes = []
    for i in range(count):
        rng = np.random.default_rng([seed, i])
        scene_seed = int(rng.integers(2**31))
        scenes.append(build_scene(corpus, policy, rng, scene_id=f"{policy.split}-{i:06d}", seed=scene_seed))
    return scenes


def render_scene(spec: SceneSpec, corpus: StemCorpus) -> RenderedScene:
    """Render the Ambisonics mixture and the dry ground truths of a scene.

    Inactive sources get all-zero truths and contribute nothing. In rooms
    the responses are aligned on their direct path so truths stay
    sample-synchronous with the mixture.
    """
    if corpus.sample_rate != spec.sample_rate:
        raise CorpusError("corpus and scene sample rates differ")
    rate = spec.sample_rate
    n = int(round(spec.duration * rate))
    truths = []
    for src in spec.sources:
        if src.active:
            truths.append(corpus.segment(src.stem_id, src.start, spec.duration).copy())
        else:
            truths.append(np.zeros(n))
    active_idx = [i for i, s in enumerate(spec.sources) if s.active]
    if spec.acoustics == "anechoic":
        mix = encode_anechoic(
            [(MonoBuffer(truths[i], rate), spec.sources[i].direction) for i in active_idx], spec.order)
    else:
        if spec.room is None:
            raise ValueError("room scene without a RoomSpec")
        room = RoomSpec(spec.room.dims, spec.room.rt60,
                        [spec.room.source_positions[i] for i in active_idx],
                        spec.room.receiver_position, spec.room.sample_rate, spec.room.speed_of_sound)
        arirs = render_arirs(room, spec.order, seed=spec.seed, align_direct=True)
        mix = encode_convolutive([MonoBuffer(truths[i], rate) for i in active_idx], arirs)
    peak = max(float(np.max(np.abs(mix.data))), max(float(np.max(np.abs(t))) for t in truths))
    scale = PEAK_LIMIT / peak if peak > PEAK_LIMIT else 1.0
    mix = AmbisonicsBuffer(mix.data * scale, mix.order, rate)
    meta = {
        "scene_id": spec.scene_id,
        "directions": [[s.direction.azimuth, s.direction.zenith] for s in spec.sources],
        "active": [s.active for s in spec.sources],
        "stems": [s.stem_id for s in spec.sources],
        "scale": scale,
    }
    return RenderedScene(mix, [MonoBuffer(t * scale, rate) for t in truths], meta)


def write_manifest(path, scenes: Sequence[SceneSpec], seed: int | None = None,
                   policy: ScenePolicy | None = None) -> None:
    doc = {
        "version": MANIFEST_VERSION,
        "seed": seed,
        "policy": None if policy is None else policy.to_dict(),
        "scenes": [s.to_dict() for s in scenes],
    }
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")


def read_manifest(path) -> tuple[list[SceneSpec], dict]:
    doc = json.loads(Path(path).read_text())
    scenes = [SceneSpec.from_dict(d) for d in doc.get("scenes", [])]
    header = {k: v for k, v in doc.items() if k != "scenes"}
    return scenes, header
