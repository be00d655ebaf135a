import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from ambisep.audio_io import write_mono
from ambisep.encode import MonoBuffer, encode_anechoic
from ambisep.scenes import MUSDB_LABELS, SPLITS, RenderedScene, sample_directions


def make_corpus(root, rate=8000, seconds=3.0, groups=3, seed=0):
    """Write a tiny stem corpus of white noise under ``root``."""
    rng = np.random.default_rng(seed)
    n = int(rate * seconds)
    for split in SPLITS:
        for g in range(groups):
            for label in MUSDB_LABELS:
                samples = 0.1 * rng.standard_normal(n)
                write_mono(Path(root) / split / f"song{g}" / f"{label}.wav", MonoBuffer(samples, rate))
    return Path(root)


def noise_scenes(count, n_sources, order, seconds, rate, seed, min_sep=5.0):
    """Anechoic scenes of independent white-noise sources."""
    rng = np.random.default_rng(seed)
    n = int(round(seconds * rate))
    scenes = []
    for _ in range(count):
        dirs = sample_directions(n_sources, rng, min_sep)
        truths = [MonoBuffer(rng.standard_normal(n), rate) for _ in dirs]
        mix = encode_anechoic(list(zip(truths, dirs)), order)
        meta = {"directions": [[d.azimuth, d.zenith] for d in dirs], "active": [True] * n_sources}
        scenes.append(RenderedScene(mix, truths, meta))
    return scenes


@pytest.fixture
def corpus_dir(tmp_path):
    return make_corpus(tmp_path / "corpus")


_CRITERIA = {}


@pytest.fixture
def criterion():
    """Record one acceptance line: ``criterion(number, title, ok, detail)``."""

    def record(number, title, ok, detail=""):
        line = f"criterion {number:2d} {'PASS' if ok else 'FAIL'}  {title}: {detail}"
        _CRITERIA[number] = line
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for number in sorted(_CRITERIA):
            terminalreporter.write_line(_CRITERIA[number])
