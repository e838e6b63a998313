"""Chunking, training, and evaluation loops."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .augment import ALL_TRANSFORMS, IDENTITY, AvcsTransform, transform_foa, transform_frames, transform_labels
from .autodiff import Adam, lr_schedule, no_grad
from .autodiff.checkpoint import load_checkpoint, save_checkpoint
from .config import DataConfig, RunConfig
from .features import FoaClip, StftConfig, extract_features
from .labels import LABEL_HOP, DecodeConfig, EventLabelSet, adpit_loss, decode_predictions
from .metrics import MetricsReport, evaluate
from .model import ModelConfig, SeldModel
from .synth import BACKGROUND, VIDEO_FPS, Scene, generate_scene, list_scenes, random_scenario, read_scene

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


@dataclass
class Example:
    """One chunk of a scene, optionally under an AVCS transform.

    Features are computed on first access and cached; frames are sliced on
    demand so an x8-augmented dataset does not hold eight copies of video.
    """

    scene: Scene
    start: int  # first label frame
    length: int  # label frames per chunk
    valid: int  # label frames inside the clip (the rest is zero padding)
    transform: AvcsTransform = IDENTITY
    stft_cfg: StftConfig = field(default_factory=StftConfig)
    name: str = ""

    @property
    def samples_per_frame(self) -> int:
        return int(round(self.scene.audio.sample_rate * LABEL_HOP))

    def audio(self) -> FoaClip:
        spf = self.samples_per_frame
        src = self.scene.audio.samples[:, self.start * spf:(self.start + self.length) * spf]
        out = np.zeros((4, self.length * spf))
        out[:, :src.shape[1]] = src
        return transform_foa(FoaClip(out, self.scene.audio.sample_rate), self.transform)

    @cached_property
    def features(self) -> np.ndarray:
        return extract_features(self.audio(), self.stft_cfg).data.astype(np.float32)

    def frames(self) -> np.ndarray | None:
        video = self.scene.frames
        if video is None or len(video) == 0:
            return None
        per_label = int(round(VIDEO_FPS * LABEL_HOP))
        lo, hi = self.start * per_label, (self.start + self.length) * per_label
        chunk = video[lo:hi]
        if len(chunk) < hi - lo:
            pad = np.full((hi - lo - len(chunk),) + video.shape[1:], BACKGROUND, dtype=video.dtype)
            chunk = np.concatenate([chunk, pad])
        return transform_frames(chunk, self.transform)

    @cached_property
    def labels(self) -> EventLabelSet:
        return transform_labels(self.scene.labels.slice(self.start, self.start + self.length), self.transform)


def chunk_starts(n_frames: int, chunk: int, hop: int, pad_tail: bool) -> list[tuple[int, int]]:
    """(start, valid) pairs in label frames; clips shorter than one chunk give none."""
    if n_frames < chunk:
        return []
    starts = list(range(0, n_frames - chunk + 1, hop))
    if pad_tail:
        tail = starts[-1] + hop
        while tail < n_frames:
            starts.append(tail)
            tail += hop
    return [(s, min(chunk, n_frames - s)) for s in starts]


def chunk_dataset(
    scenes: Sequence[Scene],
    cfg: DataConfig = DataConfig(),
    mode: str = "train",
    avcs: bool = False,
    stft_cfg: StftConfig = StftConfig(),
    names: Sequence[str] | None = None,
) -> list[Example]:
    """Slice scenes into fixed-length chunks.

    Training chunks use ``train_hop`` and drop the tail; test chunks use
    ``test_hop`` and zero-pad the last partial chunk so every frame is
    scored. With ``avcs`` every chunk appears under all eight transforms.
    """
    if mode not in ("train", "test"):
        raise ValueError(f"mode must be 'train' or 'test', got {mode!r}")
    chunk = int(round(cfg.chunk_seconds / LABEL_HOP))
    hop = int(round((cfg.train_hop if mode == "train" else cfg.test_hop) / LABEL_HOP))
    transforms = ALL_TRANSFORMS if avcs else (IDENTITY,)
    out = []
    for i, scene in enumerate(scenes):
        name = names[i] if names else f"scene{i}"
        n_frames = int(round(scene.audio.duration / LABEL_HOP))
        spans = chunk_starts(n_frames, chunk, hop, pad_tail=(mode == "test"))
        if not spans:
            log.warning("skipping %s: %.2f s is shorter than one %.1f s chunk", name, scene.audio.duration, cfg.chunk_seconds)
            continue
        for start, valid in spans:
            for t in transforms:
                out.append(Example(scene, start, chunk, valid, t, stft_cfg, name))
    return out


def batch_inputs(examples: Sequence[Example], model_cfg: ModelConfig):
    feats = np.stack([e.features for e in examples]) if model_cfg.variant in ("AO", "AV") else None
    frames = np.stack([e.frames() for e in examples]) if model_cfg.variant in ("VO", "AV") else None
    return feats, frames


def predict(model: SeldModel, examples: Sequence[Example], decode_cfg: DecodeConfig = DecodeConfig(),
            batch_size: int = 8) -> list[EventLabelSet]:
    was_training = model.training
    model.eval()
    preds = []
    with no_grad():
        for i in range(0, len(examples), batch_size):
            chunk = examples[i:i + batch_size]
            out = model(*batch_inputs(chunk, model.cfg)).data
            preds += [decode_predictions(o, decode_cfg) for o in out]
    model.train(was_training)
    return preds


def stitch(examples: Sequence[Example], preds: Sequence[EventLabelSet]) -> tuple[EventLabelSet, EventLabelSet]:
    """Concatenate the valid frames of every chunk into one reference and one prediction set."""
    ref_frames, pred_frames = [], []
    for ex, p in zip(examples, preds):
        ref_frames += ex.labels.frames[:ex.valid]
        pred_frames += p.frames[:ex.valid]
    return EventLabelSet(ref_frames), EventLabelSet(pred_frames)


def score_examples(model: SeldModel, examples: Sequence[Example], decode_cfg: DecodeConfig = DecodeConfig(),
                   averaging: str = "macro") -> MetricsReport:
    refs, preds = stitch(examples, predict(model, examples, decode_cfg))
    return evaluate(refs, preds, averaging=averaging)


@dataclass
class RunReport:
    epoch_losses: list[float]
    epoch_metrics: list[MetricsReport]
    best_epoch: int
    final: MetricsReport | None
    wall_clock: float
    config: str
    steps: int = 0
    checkpoints: list[str] = field(default_factory=list)

    def summary(self) -> str:
        lines = [f"epochs={len(self.epoch_losses)} steps={self.steps} wall_clock={self.wall_clock:.1f}s"]
        for i, loss in enumerate(self.epoch_losses):
            m = self.epoch_metrics[i] if i < len(self.epoch_metrics) else None
            tail = "" if m is None else "  " + "  ".join(f"{k}={v:.3f}" for k, v in m.as_dict().items())
            lines.append(f"epoch {i:3d} loss={loss:.5f}{tail}")
        if self.final is not None:
            lines += ["", f"best_epoch={self.best_epoch}", self.final.table()]
        return "\n".join(lines)


def load_scenes(directory) -> tuple[list[Scene], list[str]]:
    if not directory:
        return [], []
    names = list_scenes(directory)
    if not names:
        raise FileNotFoundError(f"no scenes (*.wav) found in {directory}")
    return [read_scene(directory, n) for n in names], names


def _train_steps(model: SeldModel, opt: Adam, examples: Sequence[Example], batch_size: int,
                 rng: np.random.Generator, max_steps: int | None) -> tuple[list[float], int]:
    losses = []
    order = rng.permutation(len(examples))
    steps = 0
    for i in range(0, len(order), batch_size):
        if max_steps is not None and steps >= max_steps:
            break
        batch = [examples[j] for j in order[i:i + batch_size]]
        feats, frames = batch_inputs(batch, model.cfg)
        opt.zero_grad()
        loss = adpit_loss(model(feats, frames), [e.labels for e in batch])
        value = float(loss.data)
        if not np.isfinite(value):
            raise TrainingError(
                f"non-finite loss {value} at step {steps} (lr={opt.lr:g}); "
                f"batch chunks: {[(e.name, e.start, e.transform.index) for e in batch]}"
            )
        loss.backward()
        opt.step()
        losses.append(value)
        steps += 1
    return losses, steps


def pretrain_audio(cfg: RunConfig, model: SeldModel, scenes: Sequence[Scene], log_fn: Callable = log.info) -> None:
    """Fit an audio-only twin on ``scenes`` and copy its audio encoder weights into ``model``."""
    ao_cfg = ModelConfig(**{**cfg.model.to_dict(), "variant": "AO"})
    ao = SeldModel(ao_cfg, seed=cfg.seed)
    opt = Adam(ao.named_parameters(), lr=cfg.optim.base_lr)
    examples = chunk_dataset(scenes, cfg.data, "train", cfg.augment.avcs)
    rng = np.random.default_rng(cfg.seed + 7919)
    for epoch in range(cfg.optim.pretrain_epochs):
        losses, _ = _train_steps(ao, opt, examples, cfg.optim.batch_size, rng, None)
        log_fn(f"pretrain epoch {epoch} loss={np.mean(losses):.5f}")
    state = {k[len("audio."):]: v for k, v in ao.state_dict().items() if k.startswith("audio.")}
    model.audio.load_state_dict(state)


def train(cfg: RunConfig, train_scenes: Sequence[Scene] | None = None, test_scenes: Sequence[Scene] | None = None,
          log_fn: Callable[[str], None] = log.info) -> RunReport:
    """Seeded training with per-epoch evaluation; the best epoch minimises SELD."""
    t0 = time.perf_counter()
    train_names = test_names = None
    if train_scenes is None:
        train_scenes, train_names = load_scenes(cfg.data.train_dir)
    if test_scenes is None:
        test_scenes, test_names = load_scenes(cfg.data.test_dir) if cfg.data.test_dir else ([], None)
    if not train_scenes:
        raise FileNotFoundError("no training scenes")
    model = SeldModel(cfg.model, seed=cfg.seed)
    if cfg.run.pretrain and model.audio is not None:
        pre, _ = load_scenes(cfg.data.pretrain_dir) if cfg.data.pretrain_dir else (train_scenes, None)
        pretrain_audio(cfg, model, pre, log_fn)
    opt = Adam(model.named_parameters(), lr=cfg.optim.base_lr)
    train_ex = chunk_dataset(train_scenes, cfg.data, "train", cfg.augment.avcs, names=train_names)
    test_ex = chunk_dataset(test_scenes, cfg.data, "test", names=test_names) if test_scenes else []
    if not train_ex:
        raise TrainingError("training set produced no chunks")
    rng = np.random.default_rng(cfg.seed)
    out_dir = Path(cfg.run.output_dir) if cfg.run.output_dir else None
    losses, metrics, checkpoints = [], [], []
    total_steps = 0
    max_steps = cfg.optim.max_steps or None
    for epoch in range(cfg.optim.epochs):
        opt.lr = lr_schedule(epoch, cfg.optim.base_lr, cfg.optim.hold_epochs, cfg.optim.decay)
        budget = None if max_steps is None else max_steps - total_steps
        step_losses, steps = _train_steps(model, opt, train_ex, cfg.optim.batch_size, rng, budget)
        total_steps += steps
        losses.append(float(np.mean(step_losses)) if step_losses else float("nan"))
        if test_ex:
            metrics.append(score_examples(model, test_ex, cfg.decode))
        if out_dir is not None:
            path = save_checkpoint(out_dir / f"epoch_{epoch:03d}.bin", model.state_dict(),
                                   {"epoch": epoch, "model": cfg.model.to_dict()})
            checkpoints.append(str(path))
        log_fn(f"epoch {epoch} lr={opt.lr:.2e} loss={losses[-1]:.5f}"
               + (f" SELD={metrics[-1].SELD:.4f}" if metrics else ""))
        if max_steps is not None and total_steps >= max_steps:
            break
    best = int(np.argmin([m.SELD for m in metrics])) if metrics else len(losses) - 1
    report = RunReport(losses, metrics, best, metrics[best] if metrics else None,
                       time.perf_counter() - t0, cfg.to_ini(), total_steps, checkpoints)
    if out_dir is not None:
        (out_dir / "report.txt").write_text(report.summary() + "\n")
    return report


def load_model(checkpoint, model_cfg: ModelConfig) -> SeldModel:
    model = SeldModel(model_cfg)
    expected = {k: v.shape for k, v in model.state_dict().items()}
    model.load_state_dict(load_checkpoint(checkpoint, expected))
    return model


def evaluate_run(checkpoint, cfg: RunConfig, scenes: Sequence[Scene] | None = None,
                 averaging: str = "macro") -> MetricsReport:
    names = None
    if scenes is None:
        scenes, names = load_scenes(cfg.data.test_dir)
    model = load_model(checkpoint, cfg.model)
    return score_examples(model, chunk_dataset(scenes, cfg.data, "test", names=names), cfg.decode, averaging)


def overfit_scenes(seed: int = 0, n: int = 4) -> list[Scene]:
    """The fixed seeded set of 3 s, two-event scenes used for overfitting checks."""
    rng = np.random.default_rng(seed)
    return [generate_scene(random_scenario(rng, duration=3.0, n_events=2, min_length=1.0)) for _ in range(n)]


def desk_config(fusion: str, embed_dim: int = 128) -> ModelConfig:
    """Full-depth AV model at reduced width."""
    return ModelConfig(variant="AV", fusion=fusion, embed_dim=embed_dim)


@dataclass
class OverfitResult:
    steps: int
    losses: list[float]
    f1_history: list[tuple[int, float]]
    final: MetricsReport
    seconds: float


def overfit(model_cfg: ModelConfig, scenes: Sequence[Scene], max_steps: int = 500, lr: float = 1e-3,
            seed: int = 0, target_f1: float = 0.9, target_loss: float | None = None,
            check_every: int = 25, log_fn: Callable[[str], None] = log.info) -> OverfitResult:
    """Fit one fixed batch of 3 s scenes until train F1 (and optionally loss) reach their targets."""
    t0 = time.perf_counter()
    model = SeldModel(model_cfg, seed=seed)
    opt = Adam(model.named_parameters(), lr=lr)
    examples = chunk_dataset(scenes, DataConfig(), "test")
    feats, frames = batch_inputs(examples, model_cfg)
    labels = [e.labels for e in examples]
    losses, history = [], []
    report = None
    for step in range(1, max_steps + 1):
        opt.zero_grad()
        loss = adpit_loss(model(feats, frames), labels)
        loss.backward()
        opt.step()
        losses.append(float(loss.data))
        if step % check_every == 0 or step == max_steps:
            report = score_examples(model, examples)
            history.append((step, report.F1))
            log_fn(f"step {step} loss={losses[-1]:.5f} F1={report.F1:.3f} LE={report.LE:.2f}")
            if report.F1 >= target_f1 and (target_loss is None or losses[-1] < target_loss):
                break
    return OverfitResult(len(losses), losses, history, report, time.perf_counter() - t0)
