"""Command-line entry point.

Every subcommand that writes an artifact also writes ``<artifact>.prov.json``
recording the package versions, the seed, the resolved configuration and
its SHA-256 hash. Angles on the command line are in degrees, given as
``azimuth,zenith``.

Options can also come from an INI file passed with ``--config``: keys in a
``[defaults]`` section apply to every subcommand, keys in a section named
after the subcommand apply to that subcommand only, and flags given on the
command line win over both.

Exit codes: 0 success, 1 usage error, 2 data error.
"""

from __future__ import annotations

import argparse
import configparser
import hashlib
import json
import math
import platform
import sys
from pathlib import Path

import numpy as np

from . import __version__

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: error: {message}")


def _direction(text: str):
    from .sh import Direction

    try:
        return Direction.parse(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _int_list(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _str_list(text: str) -> list[str]:
    return [v.strip() for v in text.split(",") if v.strip()]


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return value


def build_parser() -> _Parser:
    p = _Parser(prog="ambisep", description="Direction-conditioned Ambisonics source separation.")
    p.add_argument("--version", action="version", version=f"ambisep {__version__}")
    p.add_argument("--config", help="INI file with option values (flags take precedence)")
    p.add_argument("--threads", type=_positive_int, default=None,
                   help="worker threads for tensor math (default: logical cores)")
    sub = p.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)

    s = sub.add_parser("shinfo", help="list SH channels and optionally evaluate them at a direction")
    s.add_argument("--order", type=int, default=1)
    s.add_argument("--direction", type=_direction, help="azimuth,zenith in degrees")

    s = sub.add_parser("gen-scenes", help="draw scenes from a stem corpus into a manifest")
    s.add_argument("--corpus", required=True, help="corpus root directory")
    s.add_argument("--out", required=True, help="manifest JSON path")
    s.add_argument("--count", type=int, default=10)
    s.add_argument("--style", choices=("musdb", "fuss", "fixed"), default="musdb")
    s.add_argument("--split", choices=("train", "valid", "test"), default="train")
    s.add_argument("--sources", type=int, default=3, help="source count for the fixed style")
    s.add_argument("--max-sources", type=int, default=4, help="upper source count for the fuss style")
    s.add_argument("--silent-fraction", type=float, default=None)
    s.add_argument("--segment", type=float, default=6.0, help="scene length in seconds")
    s.add_argument("--acoustics", choices=("anechoic", "room"), default="anechoic")
    s.add_argument("--order", type=int, default=4)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--render-dir", help="also render mixtures and truths as WAV files here")

    s = sub.add_parser("simulate-room", help="render a directional room impulse response")
    s.add_argument("--room", help="RoomSpec JSON; a room is sampled from --seed when omitted")
    s.add_argument("--order", type=int, default=4)
    s.add_argument("--source", type=int, default=0, help="source index within the room")
    s.add_argument("--duration", type=float, default=None, help="seconds (default: covers the decay)")
    s.add_argument("--sample-rate", type=int, default=16000)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--room-out", help="write the room description used as JSON")
    s.add_argument("out", help="output Ambisonics WAV")

    s = sub.add_parser("beamform", help="extract a signal from a direction with a beamformer")
    s.add_argument("--type", dest="beam", choices=("max-di", "max-re", "max-sdr"), default="max-re")
    s.add_argument("--order", type=int, default=None, help="beam order (default: input order)")
    s.add_argument("--target", type=_direction, help="azimuth,zenith in degrees")
    s.add_argument("--reference", help="reference mono WAV (max-sdr only)")
    s.add_argument("input", help="Ambisonics WAV")
    s.add_argument("out", help="output mono WAV")

    s = sub.add_parser("pattern", help="analyse a beam pattern")
    s.add_argument("--type", dest="beam", choices=("max-di", "max-re"), default="max-re")
    s.add_argument("--order", type=int, default=3)
    s.add_argument("--target", type=_direction, default=None, help="azimuth,zenith in degrees (default 0,90)")
    s.add_argument("--n-az", type=int, default=100)
    s.add_argument("--n-zen", type=int, default=50)
    s.add_argument("--out", help="CSV of pattern gain in dB over an equiangular grid")

    s = sub.add_parser("train", help="train a separation network")
    s.add_argument("--corpus", required=True)
    s.add_argument("--manifest", required=True, help="training scene manifest")
    s.add_argument("--valid-manifest", help="validation scene manifest")
    s.add_argument("--mode", choices=("refinement", "implicit", "mixed"), default="implicit")
    s.add_argument("--order", type=int, default=None, help="Ambisonics order (default: manifest order)")
    s.add_argument("--depth", type=int, default=6)
    s.add_argument("--channels", type=int, default=64)
    s.add_argument("--lr", type=float, default=1e-4)
    s.add_argument("--batch-size", type=int, default=16)
    s.add_argument("--epochs", type=int, default=200)
    s.add_argument("--steps-per-epoch", type=int, default=None)
    s.add_argument("--max-steps", type=int, default=None)
    s.add_argument("--segment-samples", type=int, default=None, help="random crop length per item")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True, help="checkpoint path")

    s = sub.add_parser("separate", help="run a trained network at a target direction")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--target", type=_direction, required=True, help="azimuth,zenith in degrees")
    s.add_argument("input", help="Ambisonics WAV")
    s.add_argument("out", help="output mono WAV")

    s = sub.add_parser("eval", help="evaluate methods on a scene manifest")
    s.add_argument("--corpus", required=True)
    s.add_argument("--manifest", required=True)
    s.add_argument("--methods", type=_str_list, default=["max-di", "max-re", "max-sdr"],
                   help="comma-separated beamformers among max-di, max-re, max-sdr")
    s.add_argument("--orders", type=_int_list, default=[1, 2, 3, 4])
    s.add_argument("--checkpoint", action="append", default=[], help="trained network (repeatable)")
    s.add_argument("--seed", type=int, default=0, help="bootstrap seed")
    s.add_argument("--by-count", help="also write per-source-count medians to this CSV")
    s.add_argument("--out", required=True, help="report CSV")

    s = sub.add_parser("map", help="RMS map of a method's output over an equiangular grid")
    s.add_argument("--method", default="max-re", help="max-di, max-re or a checkpoint path")
    s.add_argument("--order", type=int, default=None, help="beam order (default: input order)")
    s.add_argument("--n-az", type=int, default=100)
    s.add_argument("--n-zen", type=int, default=50)
    s.add_argument("input", help="Ambisonics WAV")
    s.add_argument("out", help="CSV with azimuth, zenith, value")
    return p


def _subparser(parser: argparse.ArgumentParser, name: str) -> argparse.ArgumentParser:
    for action in parser._actions:
        if isinstance(action, argparse._SubParsersAction):
            return action.choices[name]
    raise KeyError(name)


def _apply_config(parser: _Parser, argv: list[str]) -> dict:
    """Load ``--config`` values as parser defaults; returns them for provenance."""
    pre, _ = parser.parse_known_args(argv)
    if not pre.config:
        return {}
    cfg = configparser.ConfigParser()
    if not cfg.read(pre.config):
        raise DataError(f"cannot read config file {pre.config}")
    for section in cfg.sections():
        if section != "defaults" and section not in _subcommands(parser):
            raise UsageError(f"config: unknown section [{section}]")
    used = {}
    if pre.command is None:
        return used
    sp = _subparser(parser, pre.command)
    actions = {}
    for a in sp._actions:
        if a.dest == "help":
            continue
        actions[a.dest] = a
        for opt in a.option_strings:
            actions[opt.lstrip("-").replace("-", "_")] = a
    for section in ("defaults", pre.command):
        if not cfg.has_section(section):
            continue
        for key, raw in cfg.items(section):
            dest = key.replace("-", "_")
            if dest not in actions:
                if section == "defaults":
                    continue
                raise UsageError(f"config: unknown key {key!r} for {pre.command}")
            action = actions[dest]
            if action.type is not None:
                try:
                    value = action.type(raw)
                except (argparse.ArgumentTypeError, ValueError) as exc:
                    raise UsageError(f"config: bad value for {key}: {exc}") from None
            elif isinstance(action, argparse._AppendAction):
                value = _str_list(raw)
            else:
                value = raw
            if action.choices is not None and value not in action.choices:
                raise UsageError(f"config: {key} must be one of {sorted(action.choices)}")
            if action.required:
                action.required = False
            sp.set_defaults(**{action.dest: value})
            used[action.dest] = raw
    return used


def _subcommands(parser) -> list[str]:
    for action in parser._actions:
        if isinstance(action, argparse._SubParsersAction):
            return list(action.choices)
    return []


def _jsonable(v):
    from .sh import Direction

    if isinstance(v, Direction):
        return list(v.degrees())
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    return v


def _versions() -> dict:
    import scipy

    out = {"ambisep": __version__, "python": platform.python_version(),
           "numpy": np.__version__, "scipy": scipy.__version__}
    if "torch" in sys.modules:
        out["torch"] = sys.modules["torch"].__version__
    return out


def _file_hash(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_provenance(artifact, args: argparse.Namespace, inputs=(), extra: dict | None = None) -> Path:
    """Write ``<artifact>.prov.json`` next to an output file."""
    config = {k: _jsonable(v) for k, v in sorted(vars(args).items()) if k not in ("config", "threads")}
    canon = json.dumps(config, sort_keys=True, separators=(",", ":"))
    doc = {
        "artifact": Path(artifact).name,
        "command": args.command,
        "seed": config.get("seed"),
        "config": config,
        "config_hash": hashlib.sha256(canon.encode()).hexdigest(),
        "versions": _versions(),
        "inputs": {Path(p).name: _file_hash(p) for p in inputs if p and Path(p).is_file()},
    }
    if extra:
        doc.update(extra)
    path = Path(str(artifact) + ".prov.json")
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return path


def _load_corpus(root):
    from .scenes import StemCorpus

    return StemCorpus.from_directory(root)


def _render_manifest(manifest, corpus, order=None):
    from .scenes import read_manifest, render_scene

    specs, _ = read_manifest(manifest)
    if not specs:
        raise DataError("no scenes")
    scenes = []
    for spec in specs:
        if order is not None and order > spec.order:
            raise DataError(f"scene {spec.scene_id} is order {spec.order}, order {order} requested")
        scenes.append(render_scene(spec, corpus))
    return specs, scenes


def cmd_shinfo(args) -> int:
    from .sh import acn, sh_eval

    values = sh_eval(args.order, args.direction) if args.direction is not None else None
    print("acn\tn\tm" + ("\tY" if values is not None else ""))
    for n in range(args.order + 1):
        for m in range(-n, n + 1):
            i = acn(n, m)
            line = f"{i}\t{n}\t{m}"
            if values is not None:
                line += f"\t{values[i]:.12g}"
            print(line)
    return EXIT_OK


def cmd_gen_scenes(args) -> int:
    from .audio_io import write_ambisonics, write_mono
    from .scenes import ScenePolicy, generate_scenes, render_scene, write_manifest

    corpus = _load_corpus(args.corpus)
    kw = dict(split=args.split, segment=args.segment, acoustics=args.acoustics, order=args.order)
    if args.silent_fraction is not None:
        kw["silent_fraction"] = args.silent_fraction
    if args.style == "musdb":
        policy = ScenePolicy.musdb(**kw)
    elif args.style == "fuss":
        policy = ScenePolicy.fuss(max_sources=args.max_sources, **kw)
    else:
        policy = ScenePolicy(style="fixed", n_sources=args.sources, **kw)
    specs = generate_scenes(corpus, policy, args.count, args.seed)
    write_manifest(args.out, specs, seed=args.seed, policy=policy)
    write_provenance(args.out, args)
    if args.render_dir:
        out = Path(args.render_dir)
        for spec in specs:
            scene = render_scene(spec, corpus)
            write_ambisonics(out / f"{spec.scene_id}_mix.wav", scene.mixture)
            for k, truth in enumerate(scene.truths):
                write_mono(out / f"{spec.scene_id}_src{k}.wav", truth)
    print(f"wrote {len(specs)} scenes to {args.out}")
    return EXIT_OK


def cmd_simulate_room(args) -> int:
    from .audio_io import write_ambisonics
    from .room import RoomSpec, render_drir, sample_room

    if args.room:
        room = RoomSpec.from_json(Path(args.room).read_text())
    else:
        room = sample_room(args.seed, n_sources=args.source + 1, sample_rate=args.sample_rate)
    if not 0 <= args.source < len(room.source_positions):
        raise DataError(f"room has {len(room.source_positions)} sources, index {args.source} requested")
    h = render_drir(room, args.source, args.order, duration=args.duration, seed=args.seed)
    write_ambisonics(args.out, h)
    if args.room_out:
        Path(args.room_out).write_text(room.to_json() + "\n")
    write_provenance(args.out, args, inputs=[args.room], extra={"room": room.to_dict()})
    print(f"wrote {h.data.shape[0]}-channel response of {h.n_samples} samples to {args.out}")
    return EXIT_OK


def _read_mix(path, order=None):
    from .audio_io import read_ambisonics
    from .encode import convert_convention

    mix = read_ambisonics(path)
    if mix.convention != "orthonormal":
        mix = convert_convention(mix, "orthonormal")
    if order is not None:
        if order > mix.order:
            raise DataError(f"input is order {mix.order}, order {order} requested")
        mix = mix.truncate_order(order)
    return mix


def cmd_beamform(args) -> int:
    from .audio_io import read_mono, write_mono
    from .beamform import apply_beamformer, max_sdr_weights, steer

    mix = _read_mix(args.input, args.order)
    if args.beam == "max-sdr":
        if not args.reference:
            raise UsageError("max-sdr needs --reference")
        w = max_sdr_weights(mix, read_mono(args.reference))
    else:
        if args.target is None:
            raise UsageError(f"{args.beam} needs --target")
        w = steer(args.beam, mix.order, args.target)
    write_mono(args.out, apply_beamformer(w, mix))
    write_provenance(args.out, args, inputs=[args.input, args.reference],
                     extra={"weights": [float(v) for v in w.d]})
    return EXIT_OK


def cmd_pattern(args) -> int:
    from .beamform import directivity_index, pattern_values, re_vector, side_lobe_level, steer
    from .sh import Direction, equiangular_grid

    target = args.target if args.target is not None else Direction(0.0, math.pi / 2)
    w = steer(args.beam, args.order, target)
    di = directivity_index(w)
    re = float(np.linalg.norm(re_vector(w)))
    sll = side_lobe_level(w)
    print(f"directivity_index_db\t{di:.6f}")
    print(f"re_length\t{re:.6f}")
    print(f"side_lobe_db\t{sll:.6f}")
    if args.out:
        grid = equiangular_grid(args.n_az, args.n_zen)
        g = pattern_values(w, grid.azimuths, grid.zeniths)
        peak = float(np.max(np.abs(g)))
        lines = ["azimuth_deg,zenith_deg,gain_db"]
        for d, v in zip(grid, g):
            az, zen = d.degrees()
            lines.append(f"{az:.4f},{zen:.4f},{20 * math.log10(max(abs(v) / peak, 1e-12)):.6f}")
        Path(args.out).write_text("\n".join(lines) + "\n")
        write_provenance(args.out, args, extra={"directivity_index_db": di, "re_length": re,
                                                "side_lobe_db": sll})
    return EXIT_OK


def cmd_train(args) -> int:
    from .scenes import read_manifest
    from .separator import ModelConfig, TrainHyper, build_model, save_checkpoint, train

    corpus = _load_corpus(args.corpus)
    specs, _ = read_manifest(args.manifest)
    if not specs:
        raise DataError("no scenes")
    order = args.order if args.order is not None else specs[0].order
    _, scenes = _render_manifest(args.manifest, corpus, order)
    scenes = [_truncated(s, order) for s in scenes]
    valid = []
    if args.valid_manifest:
        _, valid = _render_manifest(args.valid_manifest, corpus, order)
        valid = [_truncated(s, order) for s in valid]
    config = ModelConfig(mode=args.mode, ambi_order=order, depth=args.depth, channels=args.channels,
                         sample_rate=corpus.sample_rate)
    hyper = TrainHyper(lr=args.lr, batch_size=args.batch_size, epochs=args.epochs,
                       steps_per_epoch=args.steps_per_epoch, max_steps=args.max_steps,
                       segment_samples=args.segment_samples, seed=args.seed)
    model = build_model(config, args.seed)
    best, history = train(model, scenes, valid, hyper,
                          log=lambda r: print(f"epoch {r['epoch']}\ttrain {r['train_loss']:.6f}"
                                              f"\tvalid {r['valid_loss']:.6f}\tlr {r['lr']:.3g}"))
    metrics = {"best_valid": history.best_valid, "best_epoch": history.best_epoch}
    save_checkpoint(args.out, best, seed=args.seed, metrics=metrics, extra={"hyper": hyper.to_dict()})
    hist_path = Path(str(args.out) + ".history.json")
    hist_path.write_text(json.dumps(history.to_dict(), sort_keys=True) + "\n")
    write_provenance(args.out, args, inputs=[args.manifest, args.valid_manifest], extra={"metrics": metrics})
    return EXIT_OK


def _truncated(scene, order):
    from .scenes import RenderedScene

    return RenderedScene(scene.mixture.truncate_order(order), scene.truths, scene.meta)


def cmd_separate(args) -> int:
    from .audio_io import write_mono
    from .separator import load_checkpoint, separate

    model, _ = load_checkpoint(args.checkpoint)
    mix = _read_mix(args.input, model.config.ambi_order)
    write_mono(args.out, separate(model, mix, args.target))
    write_provenance(args.out, args, inputs=[args.input, args.checkpoint])
    return EXIT_OK


def cmd_eval(args) -> int:
    from .evaluation import (EvalReport, beamformer_method, evaluate_method, max_sdr_method,
                             network_method, per_source_count_csv, per_source_count_report)
    from .scenes import read_manifest
    from .separator import load_checkpoint

    specs, _ = read_manifest(args.manifest)
    if not specs:
        raise DataError("no scenes")
    corpus = _load_corpus(args.corpus)
    _, scenes = _render_manifest(args.manifest, corpus)
    methods = []
    for name in args.methods:
        key = name.replace("_", "-").lower()
        for order in args.orders:
            if key in ("max-di", "max-re"):
                methods.append(beamformer_method(key, order))
            elif key == "max-sdr":
                methods.append(max_sdr_method(order))
            else:
                raise UsageError(f"unknown method {name!r}")
    for path in args.checkpoint:
        model, _ = load_checkpoint(path)
        methods.append(network_method(model, f"{model.config.mode}:{Path(path).name}"))
    results = [evaluate_method(m, scenes, seed=args.seed) for m in methods]
    condition = "room" if any(s.acoustics == "room" for s in specs) else "anechoic"
    report = EvalReport([r.summary() for r in results], len(scenes), args.seed, condition)
    Path(args.out).write_text(report.to_csv())
    write_provenance(args.out, args, inputs=[args.manifest, *args.checkpoint],
                     extra={"scene_count": len(scenes), "condition": condition})
    if args.by_count:
        Path(args.by_count).write_text(per_source_count_csv(per_source_count_report(results)))
        write_provenance(args.by_count, args, inputs=[args.manifest, *args.checkpoint])
    sys.stdout.write(report.to_csv())
    return EXIT_OK


def cmd_map(args) -> int:
    from .beamform import apply_beamformer, steer
    from .evaluation import direction_map
    from .sh import equiangular_grid

    grid = equiangular_grid(args.n_az, args.n_zen)
    key = args.method.replace("_", "-").lower()
    if key in ("max-di", "max-re"):
        mix = _read_mix(args.input, args.order)
        predict = lambda d: apply_beamformer(steer(key, mix.order, d), mix)
        maps = direction_map(predict, grid)
    else:
        from .separator import load_checkpoint, separate, separate_many

        model, _ = load_checkpoint(args.method)
        mix = _read_mix(args.input, model.config.ambi_order)
        maps = direction_map(lambda d: separate(model, mix, d), grid,
                             predict_many=lambda ds: separate_many(model, mix, ds))
    Path(args.out).write_text(maps[0].to_csv())
    write_provenance(args.out, args, inputs=[args.input] + ([] if key.startswith("max-") else [args.method]))
    return EXIT_OK


COMMANDS = {
    "shinfo": cmd_shinfo,
    "gen-scenes": cmd_gen_scenes,
    "simulate-room": cmd_simulate_room,
    "beamform": cmd_beamform,
    "pattern": cmd_pattern,
    "train": cmd_train,
    "separate": cmd_separate,
    "eval": cmd_eval,
    "map": cmd_map,
}


def _set_threads(n):
    # torch already defaults to the logical core count
    if n is not None:
        import torch

        torch.set_num_threads(n)


def run(argv=None) -> int:
    """Execute one command; returns the process exit code."""
    from .scenes import CorpusError
    from .separator import CheckpointError, TrainingDiverged

    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        used = _apply_config(parser, argv)
        args = parser.parse_args(argv)
        if args.command is None:
            parser.print_help()
            return EXIT_USAGE
        _set_threads(args.threads)
        if used:
            args.config_values = used
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except (DataError, CorpusError, CheckpointError, TrainingDiverged, ValueError, KeyError,
            OSError) as exc:
        print(f"ambisep: error: {exc}", file=sys.stderr)
        return EXIT_DATA


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
