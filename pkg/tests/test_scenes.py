import json
import math

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from ambisep.audio_io import write_mono
from ambisep.encode import MonoBuffer
from ambisep.scenes import (
    CorpusError,
    ScenePolicy,
    SceneSource,
    SceneSpec,
    StemCorpus,
    generate_scenes,
    read_manifest,
    render_scene,
    sample_directions,
    write_manifest,
)
from ambisep.sh import Direction, great_circle, sh_eval


def test_corpus_discovery(corpus_dir):
    corpus = StemCorpus.from_directory(corpus_dir)
    assert len(corpus) == 27
    assert corpus.sample_rate == 8000
    assert {e.split for e in corpus.entries} == {"train", "valid", "test"}
    corpus.write_index()
    again = StemCorpus.from_directory(corpus_dir)
    assert [e.id for e in again.entries] == [e.id for e in corpus.entries]


def test_empty_corpus(tmp_path):
    with pytest.raises(CorpusError):
        StemCorpus.from_directory(tmp_path)


def test_sample_directions_separation():
    rng = np.random.default_rng(0)
    for _ in range(200):
        a, b = sample_directions(2, rng)
        assert great_circle(a, b) >= math.radians(5)


def test_sample_directions_uniform():
    rng = np.random.default_rng(1)
    vecs = np.array([sample_directions(1, rng)[0].unit_vector for _ in range(100_000)])
    assert np.linalg.norm(vecs.mean(axis=0)) < 0.01


def test_sample_directions_seeded():
    a = sample_directions(3, np.random.default_rng(5))
    b = sample_directions(3, np.random.default_rng(5))
    assert a == b


def test_silent_fraction(corpus_dir):
    corpus = StemCorpus.from_directory(corpus_dir)
    scenes = generate_scenes(corpus, ScenePolicy.musdb("train", segment=1.0), 2000, seed=3)
    frac = np.mean([s.active_count < len(s.sources) for s in scenes])
    assert abs(frac - 0.3) < 0.04
    assert all(s.active_count >= 1 for s in scenes)


def test_musdb_test_scenes_share_song(corpus_dir):
    corpus = StemCorpus.from_directory(corpus_dir)
    for s in generate_scenes(corpus, ScenePolicy.musdb("test", segment=1.0), 20, seed=0):
        groups = {corpus[src.stem_id].group for src in s.sources}
        assert len(groups) == 1
        assert len({src.start for src in s.sources}) == 1
        assert s.active_count == 3


def test_fuss_test_scenes_have_two_active(corpus_dir):
    corpus = StemCorpus.from_directory(corpus_dir)
    scenes = generate_scenes(corpus, ScenePolicy.fuss("test", segment=1.0), 300, seed=0)
    assert min(s.active_count for s in scenes) >= 2
    assert {len(s.sources) for s in scenes} <= {2, 3, 4}


def test_split_hygiene(corpus_dir):
    corpus = StemCorpus.from_directory(corpus_dir)
    for split in ("train", "valid"):
        for s in generate_scenes(corpus, ScenePolicy.musdb(split, segment=1.0), 50, seed=1):
            assert all(corpus[src.stem_id].split == split for src in s.sources)


def test_pairwise_separation_includes_inactive(corpus_dir):
    corpus = StemCorpus.from_directory(corpus_dir)
    for s in generate_scenes(corpus, ScenePolicy.musdb("train", segment=1.0), 200, seed=2):
        d = s.directions
        for i in range(len(d)):
            for j in range(i + 1, len(d)):
                assert great_circle(d[i], d[j]) >= math.radians(5)


def test_impulse_scene_render(tmp_path):
    x = np.zeros(8000)
    x[100] = 0.5
    write_mono(tmp_path / "train" / "g" / "click.wav", MonoBuffer(x, 8000))
    corpus = StemCorpus.from_directory(tmp_path)
    d = Direction(0.4, 1.3)
    spec = SceneSpec("s", [SceneSource("train/g/click", 0.0, d)], duration=1.0, order=2, sample_rate=8000)
    scene = render_scene(spec, corpus)
    assert_allclose(scene.mixture.data[:, 100], 0.5 * sh_eval(2, d), rtol=1e-7)
    assert np.count_nonzero(scene.mixture.data[0]) == 1


def test_inactive_source_silent(corpus_dir):
    corpus = StemCorpus.from_directory(corpus_dir)
    stems = [e.id for e in corpus.split("train")][:2]
    d = sample_directions(2, np.random.default_rng(0))
    active = SceneSpec("a", [SceneSource(stems[0], 0.0, d[0])], 1.0, order=1, sample_rate=8000)
    both = SceneSpec("b", [SceneSource(stems[0], 0.0, d[0]), SceneSource(stems[1], 0.0, d[1], False)],
                     1.0, order=1, sample_rate=8000)
    ra, rb = render_scene(active, corpus), render_scene(both, corpus)
    assert_array_equal(ra.mixture.data, rb.mixture.data)
    assert not np.any(rb.truths[1].samples)


def test_manifest_round_trip_bit_identical(corpus_dir, tmp_path):
    corpus = StemCorpus.from_directory(corpus_dir)
    policy = ScenePolicy.musdb("train", segment=1.0, order=2, acoustics="room")
    specs = generate_scenes(corpus, policy, 2, seed=4)
    write_manifest(tmp_path / "m.json", specs, seed=4, policy=policy)
    again, header = read_manifest(tmp_path / "m.json")
    assert header["seed"] == 4
    assert [s.to_dict() for s in again] == [s.to_dict() for s in specs]
    for a, b in zip(specs, again):
        ra, rb = render_scene(a, corpus), render_scene(b, corpus)
        assert_array_equal(ra.mixture.data, rb.mixture.data)
        for x, y in zip(ra.truths, rb.truths):
            assert_array_equal(x.samples, y.samples)


def test_generation_deterministic(corpus_dir):
    corpus = StemCorpus.from_directory(corpus_dir)
    policy = ScenePolicy.fuss("train", segment=1.0)
    a = generate_scenes(corpus, policy, 30, seed=9)
    b = generate_scenes(corpus, policy, 30, seed=9)
    assert json.dumps([s.to_dict() for s in a]) == json.dumps([s.to_dict() for s in b])


def test_room_scene_sources_follow_directions(corpus_dir):
    corpus = StemCorpus.from_directory(corpus_dir)
    policy = ScenePolicy.musdb("train", segment=1.0, order=1, acoustics="room")
    for s in generate_scenes(corpus, policy, 5, seed=6):
        for i, src in enumerate(s.sources):
            assert_allclose(s.room.source_direction(i).unit_vector, src.direction.unit_vector, atol=1e-12)


def test_peak_safety(tmp_path):
    loud = np.ones(8000) * 0.9
    for g in ("a", "b"):
        write_mono(tmp_path / "train" / g / "x.wav", MonoBuffer(loud, 8000))
    corpus = StemCorpus.from_directory(tmp_path)
    d = Direction(0.0, 0.0)
    spec = SceneSpec("s", [SceneSource("train/a/x", 0.0, d), SceneSource("train/b/x", 0.0, Direction(0.0, 0.5))],
                     1.0, order=1, sample_rate=8000)
    scene = render_scene(spec, corpus)
    assert np.max(np.abs(scene.mixture.data)) <= 0.99 + 1e-12
    assert_allclose(scene.truths[0].samples, 0.9 * scene.meta["scale"])
