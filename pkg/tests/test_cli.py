import hashlib
import json

import numpy as np
import pytest
from numpy.testing import assert_allclose

from ambisep.audio_io import read_ambisonics, read_mono, write_ambisonics
from ambisep.beamform import apply_beamformer, max_re_weights
from ambisep.cli import build_parser, run
from ambisep.encode import MonoBuffer, encode_anechoic
from ambisep.sh import Direction


def _digest(path):
    return hashlib.sha256(open(path, "rb").read()).hexdigest()


@pytest.fixture
def foa_wav(tmp_path):
    rng = np.random.default_rng(0)
    src = MonoBuffer(0.1 * rng.standard_normal(4000), 8000)
    mix = encode_anechoic([(src, Direction.from_degrees(30, 90))], 3)
    path = tmp_path / "in.wav"
    write_ambisonics(path, mix)
    return path


def test_beamform_smoke(tmp_path, foa_wav):
    out = tmp_path / "out.wav"
    assert run(["beamform", "--type", "max-re", "--order", "3", "--target", "30,90", str(foa_wav), str(out)]) == 0
    y = read_mono(out)
    mix = read_ambisonics(foa_wav)
    expected = apply_beamformer(max_re_weights(3, Direction.from_degrees(30, 90)), mix)
    assert_allclose(y.samples, expected.samples, atol=1e-6)
    prov = json.loads((tmp_path / "out.wav.prov.json").read_text())
    assert prov["command"] == "beamform"
    assert prov["config"]["beam"] == "max-re"
    assert len(prov["config_hash"]) == 64
    assert prov["inputs"]["in.wav"] == _digest(foa_wav)
    assert {"ambisep", "numpy", "scipy", "python"} <= set(prov["versions"])


def test_usage_errors_exit_one(tmp_path, foa_wav, capsys):
    assert run(["beamform", "--type", "bogus", str(foa_wav), str(tmp_path / "o.wav")]) == 1
    assert run(["beamform", "--type", "max-re", str(foa_wav), str(tmp_path / "o.wav")]) == 1
    assert run(["no-such-command"]) == 1
    assert run([]) == 1


def test_data_errors_exit_two(tmp_path, foa_wav):
    assert run(["beamform", "--target", "0,90", str(tmp_path / "missing.wav"), str(tmp_path / "o.wav")]) == 2
    assert run(["beamform", "--order", "5", "--target", "0,90", str(foa_wav), str(tmp_path / "o.wav")]) == 2


def test_eval_empty_manifest(tmp_path, corpus_dir, capsys):
    manifest = tmp_path / "empty.json"
    assert run(["gen-scenes", "--corpus", str(corpus_dir), "--out", str(manifest), "--count", "0"]) == 0
    code = run(["eval", "--corpus", str(corpus_dir), "--manifest", str(manifest), "--out", str(tmp_path / "r.csv")])
    assert code == 2
    assert "no scenes" in capsys.readouterr().err


def test_help_lists_every_flag(capsys):
    parser = build_parser()
    for name, sub in parser._subparsers._group_actions[0].choices.items():
        text = sub.format_help()
        for action in sub._actions:
            for opt in action.option_strings:
                assert opt in text, (name, opt)
    with pytest.raises(SystemExit):
        run(["train", "--help"])
    assert "--segment-samples" in capsys.readouterr().out


def test_config_file_and_flag_precedence(tmp_path, foa_wav):
    cfg = tmp_path / "run.ini"
    cfg.write_text("[beamform]\ntype = max-di\ntarget = 30,90\n")
    out = tmp_path / "a.wav"
    assert run(["--config", str(cfg), "beamform", str(foa_wav), str(out)]) == 0
    prov = json.loads((tmp_path / "a.wav.prov.json").read_text())
    assert prov["config"]["beam"] == "max-di"
    assert prov["config"]["config_values"] == {"beam": "max-di", "target": "30,90"}
    out2 = tmp_path / "b.wav"
    assert run(["--config", str(cfg), "beamform", "--type", "max-re", str(foa_wav), str(out2)]) == 0
    assert json.loads((tmp_path / "b.wav.prov.json").read_text())["config"]["beam"] == "max-re"
    flag_only = tmp_path / "c.wav"
    assert run(["beamform", "--type", "max-di", "--target", "30,90", str(foa_wav), str(flag_only)]) == 0
    assert _digest(out) == _digest(flag_only)


def test_config_rejects_unknown_keys(tmp_path, foa_wav):
    cfg = tmp_path / "bad.ini"
    cfg.write_text("[beamform]\nwidth = 3\n")
    assert run(["--config", str(cfg), "beamform", str(foa_wav), str(tmp_path / "o.wav")]) == 1
    cfg.write_text("[nonsense]\nx = 1\n")
    assert run(["--config", str(cfg), "shinfo"]) == 1


def test_shinfo_and_pattern(tmp_path, capsys):
    assert run(["shinfo", "--order", "2", "--direction", "0,90"]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert len(lines) == 10
    out = tmp_path / "p.csv"
    assert run(["pattern", "--type", "max-di", "--order", "2", "--n-az", "8", "--n-zen", "4", "--out", str(out)]) == 0
    text = capsys.readouterr().out
    di = float(text.split("directivity_index_db\t")[1].split()[0])
    assert abs(di - 10 * np.log10(9)) < 0.01
    assert len(out.read_text().splitlines()) == 33


def test_pipeline_is_byte_identical(tmp_path, corpus_dir):
    def pipeline(tag):
        d = tmp_path / tag
        d.mkdir(exist_ok=True)
        manifest = d / "scenes.json"
        assert run(["gen-scenes", "--corpus", str(corpus_dir), "--out", str(manifest), "--count", "2",
                    "--style", "fixed", "--sources", "2", "--segment", "0.5", "--order", "1",
                    "--seed", "3", "--render-dir", str(d / "render")]) == 0
        ckpt = d / "net.ckpt"
        assert run(["train", "--corpus", str(corpus_dir), "--manifest", str(manifest), "--depth", "2",
                    "--channels", "4", "--batch-size", "2", "--max-steps", "3", "--steps-per-epoch", "1",
                    "--seed", "1", "--out", str(ckpt)]) == 0
        report = d / "report.csv"
        assert run(["eval", "--corpus", str(corpus_dir), "--manifest", str(manifest), "--orders", "1",
                    "--checkpoint", str(ckpt), "--by-count", str(d / "counts.csv"), "--out", str(report)]) == 0
        mix = sorted((d / "render").glob("*_mix.wav"))[0]
        assert run(["separate", "--checkpoint", str(ckpt), "--target", "10,80", str(mix), str(d / "sep.wav")]) == 0
        assert run(["map", "--method", str(ckpt), "--n-az", "6", "--n-zen", "3", str(mix), str(d / "map.csv")]) == 0
        room = d / "drir.wav"
        assert run(["simulate-room", "--order", "1", "--sample-rate", "8000", "--seed", "2", str(room)]) == 0
        return {p.relative_to(d).as_posix(): _digest(p) for p in sorted(d.rglob("*")) if p.is_file()}

    first = pipeline("a")
    second = pipeline("a")
    assert len(first) > 10
    assert first == second
    header = (tmp_path / "a" / "report.csv").read_text().splitlines()
    assert len(header) == 5


def test_separate_order_mismatch_is_data_error(tmp_path, corpus_dir, foa_wav):
    from ambisep.separator import ModelConfig, build_model, save_checkpoint

    ckpt = tmp_path / "m.ckpt"
    save_checkpoint(ckpt, build_model(ModelConfig.toy("implicit", 4, depth=2, channels=4)))
    assert run(["separate", "--checkpoint", str(ckpt), "--target", "0,90", str(foa_wav), str(tmp_path / "o.wav")]) == 2
    bad = tmp_path / "bad.ckpt"
    bad.write_bytes(b"garbage")
    assert run(["separate", "--checkpoint", str(bad), "--target", "0,90", str(foa_wav), str(tmp_path / "o.wav")]) == 2
