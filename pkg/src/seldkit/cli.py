"""Command-line entry point: ``seldkit synth|features|augment|train|eval|score``.

Exit codes: 0 success, 1 input error (bad arguments, config, or files),
2 runtime failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import harness
from .augment import ALL_TRANSFORMS, AugmentInputError, AvcsTransform, transform_foa, transform_frames, transform_labels
from .config import ConfigFileError, load_config
from .features import FeatureInputError, StftConfig, extract_features, read_wav, save_features
from .labels import EventLabelSet, LabelError, read_label_csv, write_label_csv
from .metrics import EvaluationError, evaluate
from .synth import ScenarioError, ScenarioSpec, Scene, generate_scene, random_scenario, read_scene, write_scene

log = logging.getLogger("seldkit")

INPUT_ERRORS = (
    FileNotFoundError, IsADirectoryError, ConfigFileError, FeatureInputError, LabelError,
    AugmentInputError, ScenarioError, EvaluationError, ValueError,
)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _scene_path(path: str) -> tuple[Path, str]:
    p = Path(path)
    return p.parent, p.stem


def cmd_synth(args) -> int:
    out = Path(args.out)
    if args.scenario:
        specs = [ScenarioSpec.from_json(Path(args.scenario).read_text())]
    else:
        rng = np.random.default_rng(args.seed)
        specs = [
            random_scenario(rng, duration=args.duration, n_events=args.events, max_rate=args.max_rate, snr_db=args.snr)
            for _ in range(args.count)
        ]
    for i, spec in enumerate(specs):
        name = f"{args.prefix}{i:04d}"
        write_scene(out, name, generate_scene(spec))
        print(f"wrote {out / name}.wav")
    return 0


def cmd_features(args) -> int:
    stft_cfg = StftConfig()
    clip = read_wav(args.input)
    if clip.sample_rate != stft_cfg.sample_rate:
        raise FeatureInputError(f"expected {stft_cfg.sample_rate} Hz audio, got {clip.sample_rate} Hz")
    feats = extract_features(clip, stft_cfg)
    save_features(args.out, feats)
    c, t, f = feats.data.shape
    print(f"channels={c}\nframes={t}\nmel_bins={f}")
    return 0


def cmd_augment(args) -> int:
    if args.all_8 == bool(args.transform):
        raise UsageError("give exactly one of --transform k,flip or --all-8")
    transforms = ALL_TRANSFORMS if args.all_8 else (AvcsTransform.parse(args.transform),)
    directory, name = _scene_path(args.input)
    scene = read_scene(directory, name)
    for t in transforms:
        frames = transform_frames(scene.frames, t) if len(scene.frames) else scene.frames
        out = Scene(scene.spec, transform_foa(scene.audio, t), frames, transform_labels(scene.labels, t))
        tag = f"{name}_k{t.rotation_k}f{int(t.elev_flip)}"
        write_scene(args.out, tag, out)
        print(f"wrote {Path(args.out) / tag}.wav transform={t.rotation_k},{int(t.elev_flip)}")
    return 0


def cmd_train(args) -> int:
    cfg = load_config(args.config, args.set)
    report = harness.train(cfg, log_fn=print)
    print(report.summary())
    return 0


def cmd_eval(args) -> int:
    cfg = load_config(args.config, args.set)
    scenes, names = harness.load_scenes(args.data or cfg.data.test_dir)
    model = harness.load_model(args.checkpoint, cfg.model)
    refs, preds = [], []
    for scene, name in zip(scenes, names):
        examples = harness.chunk_dataset([scene], cfg.data, "test", names=[name])
        if not examples:
            continue
        ref, pred = harness.stitch(examples, harness.predict(model, examples, cfg.decode))
        refs.append(ref)
        preds.append(pred)
        if args.pred_dir:
            Path(args.pred_dir).mkdir(parents=True, exist_ok=True)
            write_label_csv(Path(args.pred_dir) / f"{name}.csv", pred)
    if not refs:
        raise FileNotFoundError("no evaluable scenes")
    report = evaluate(_concat(refs), _concat(preds), averaging="micro" if args.micro else "macro")
    print(report.table())
    return 0


def _concat(sets):
    return EventLabelSet([f for s in sets for f in s.frames])


def cmd_score(args) -> int:
    ref = read_label_csv(args.ref)
    pred = read_label_csv(args.pred, n_frames=ref.n_frames)
    if pred.n_frames > ref.n_frames:
        ref = read_label_csv(args.ref, n_frames=pred.n_frames)
    report = evaluate(ref, pred, averaging="micro" if args.micro else "macro")
    print(report.table())
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="seldkit", description="Audio-visual SELD toolkit")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def with_config(sp):
        sp.add_argument("--config", help="INI run configuration")
        sp.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                        help="override a config entry (repeatable)")

    sp = sub.add_parser("synth", help="render synthetic scenes")
    sp.add_argument("--out", required=True)
    sp.add_argument("--scenario", help="scenario JSON to render instead of random scenes")
    sp.add_argument("--count", type=int, default=1)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--duration", type=float, default=3.0)
    sp.add_argument("--events", type=int, default=2)
    sp.add_argument("--max-rate", type=float, default=0.0, help="max azimuth speed, deg/s")
    sp.add_argument("--snr", type=float, default=30.0)
    sp.add_argument("--prefix", default="scene")
    sp.set_defaults(fn=cmd_synth)

    sp = sub.add_parser("features", help="extract log-mel + intensity-vector features")
    sp.add_argument("--in", dest="input", required=True)
    sp.add_argument("--out", required=True)
    sp.set_defaults(fn=cmd_features)

    sp = sub.add_parser("augment", help="apply AVCS transforms to a scene")
    sp.add_argument("--in", dest="input", required=True, help="scene .wav (csv, json, frames alongside)")
    sp.add_argument("--out", required=True)
    sp.add_argument("--transform", help="k,flip with k in 0..3 and flip in 0/1")
    sp.add_argument("--all-8", action="store_true")
    sp.set_defaults(fn=cmd_augment)

    sp = sub.add_parser("train", help="train a model")
    with_config(sp)
    sp.set_defaults(fn=cmd_train)

    sp = sub.add_parser("eval", help="evaluate a checkpoint")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--data", help="scene directory (defaults to data.test_dir)")
    sp.add_argument("--pred-dir", help="write per-scene prediction CSVs here")
    sp.add_argument("--micro", action="store_true")
    with_config(sp)
    sp.set_defaults(fn=cmd_eval)

    sp = sub.add_parser("score", help="score a prediction CSV against a reference CSV")
    sp.add_argument("--ref", required=True)
    sp.add_argument("--pred", required=True)
    sp.add_argument("--micro", action="store_true")
    sp.set_defaults(fn=cmd_score)
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format="%(levelname)s %(message)s")
    try:
        return args.fn(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except INPUT_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # runtime failure
        print(f"failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
