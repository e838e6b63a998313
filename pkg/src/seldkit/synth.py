"""Seeded synthetic audio-visual scenes: FOA audio, equirectangular frames, labels.

Each event is amplitude-modulated band-limited noise whose centre
frequency encodes its class (300 Hz x (class + 1), 100 Hz wide) and whose
frame rendering is a Gaussian blob hued by class. Sources may move in
azimuth at a constant rate.
"""

from __future__ import annotations

import colorsys
import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .augment import AvcsTransform, doa_to_pixel, transform_angles
from .features import SAMPLE_RATE, FoaClip, read_wav, wrap_azimuth, write_wav
from .labels import LABEL_HOP, NUM_CLASSES, NUM_TRACKS, Event, EventLabelSet, read_label_csv, write_label_csv

VIDEO_FPS = 10
BACKGROUND = 128
BLOB_SIGMA = 6.0


class ScenarioError(ValueError):
    pass


@dataclass(frozen=True)
class EventSpec:
    class_id: int
    onset: float
    offset: float
    azimuth: float  # at onset, degrees
    elevation: float
    azimuth_rate: float = 0.0  # degrees per second

    def azimuth_at(self, t):
        return wrap_azimuth(self.azimuth + self.azimuth_rate * (np.asarray(t) - self.onset))


@dataclass(frozen=True)
class ScenarioSpec:
    seed: int = 0
    duration: float = 3.0
    events: tuple[EventSpec, ...] = ()
    snr_db: float = 30.0
    frame_size: tuple[int, int] = (448, 224)  # (W, H)
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        object.__setattr__(self, "events", tuple(
            e if isinstance(e, EventSpec) else EventSpec(**e) for e in self.events
        ))
        object.__setattr__(self, "frame_size", tuple(self.frame_size))
        for i, e in enumerate(self.events):
            if not 0 <= e.class_id < NUM_CLASSES:
                raise ScenarioError(f"event {i}: class {e.class_id} outside 0..{NUM_CLASSES - 1}")
            if not 0 <= e.onset < e.offset <= self.duration + 1e-9:
                raise ScenarioError(f"event {i}: need 0 <= onset < offset <= duration, got {e.onset}, {e.offset}")
            if not -90 <= e.elevation <= 90:
                raise ScenarioError(f"event {i}: elevation {e.elevation} out of range")
        w, h = self.frame_size
        if w != 2 * h:
            raise ScenarioError(f"frame size must be 2:1, got {w}x{h}")
        poly = render_labels(self).max_polyphony()
        if poly > NUM_TRACKS:
            raise ScenarioError(f"{poly} simultaneous same-class events exceed {NUM_TRACKS}")

    @property
    def n_samples(self) -> int:
        return int(round(self.duration * self.sample_rate))

    @property
    def n_label_frames(self) -> int:
        return int(round(self.duration / LABEL_HOP))

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=1)

    @classmethod
    def from_json(cls, text: str) -> "ScenarioSpec":
        raw = json.loads(text)
        raw["events"] = tuple(EventSpec(**e) for e in raw.get("events", ()))
        return cls(**raw)


def active_frames(event: EventSpec, n_frames: int, rate: float = 1 / LABEL_HOP) -> range:
    """Frames whose centre time lies within [onset, offset] (onset on a half frame rounds down)."""
    first = math.ceil(event.onset * rate - 0.5 - 1e-9)
    last = math.floor(event.offset * rate - 0.5 + 1e-9)
    return range(max(first, 0), min(last, n_frames - 1) + 1)


def render_labels(spec: ScenarioSpec) -> EventLabelSet:
    frames: list[list[Event]] = [[] for _ in range(spec.n_label_frames)]
    for src, e in enumerate(spec.events):
        for k in active_frames(e, spec.n_label_frames):
            t = (k + 0.5) * LABEL_HOP
            frames[k].append(Event(e.class_id, src, float(e.azimuth_at(t)), float(e.elevation)))
    return EventLabelSet(frames)


def _band_noise(rng: np.random.Generator, n: int, centre: float, width: float, sr: int) -> np.ndarray:
    spec = np.fft.rfft(rng.standard_normal(n))
    freqs = np.fft.rfftfreq(n, 1.0 / sr)
    spec[np.abs(freqs - centre) > width / 2] = 0.0
    x = np.fft.irfft(spec, n)
    return x / np.sqrt(np.mean(x**2))


def class_frequency(class_id: int) -> float:
    return 300.0 * (class_id + 1)


def render_components(spec: ScenarioSpec) -> tuple[np.ndarray, np.ndarray]:
    """Clean spatialized events and the additive noise, each [4, S]."""
    sr, n = spec.sample_rate, spec.n_samples
    t = np.arange(n) / sr
    clean = np.zeros((4, n))
    active = np.zeros(n, dtype=bool)
    seeds = np.random.SeedSequence(spec.seed).spawn(len(spec.events) + 1)
    fade = int(0.005 * sr)
    for e, ss in zip(spec.events, seeds):
        rng = np.random.default_rng(ss)
        sig = _band_noise(rng, n, class_frequency(e.class_id), 100.0, sr)
        sig *= 0.75 + 0.25 * np.sin(2 * np.pi * 2.0 * t + rng.uniform(0, 2 * np.pi))
        lo, hi = int(round(e.onset * sr)), int(round(e.offset * sr))
        env = np.zeros(n)
        env[lo:hi] = 1.0
        ramp = min(fade, (hi - lo) // 2)
        if ramp > 0:
            r = 0.5 - 0.5 * np.cos(np.pi * np.arange(ramp) / ramp)
            env[lo:lo + ramp] = r
            env[hi - ramp:hi] = r[::-1]
        sig *= env
        active[lo:hi] = True
        az = np.radians(e.azimuth_at(t))
        el = np.radians(e.elevation)
        clean[0] += sig
        clean[1] += sig * np.sin(az) * np.cos(el)
        clean[2] += sig * np.sin(el)
        clean[3] += sig * np.cos(az) * np.cos(el)
    ref_power = float(np.mean(clean[0, active] ** 2)) if active.any() else 1.0
    noise = np.random.default_rng(seeds[-1]).standard_normal((4, n))
    noise *= np.sqrt(ref_power * 10 ** (-spec.snr_db / 10) / np.mean(noise**2, axis=1, keepdims=True))
    return clean, noise


def render_audio(spec: ScenarioSpec) -> FoaClip:
    clean, noise = render_components(spec)
    return FoaClip(clean + noise, spec.sample_rate)


def class_color(class_id: int) -> np.ndarray:
    return np.array(colorsys.hsv_to_rgb(class_id / NUM_CLASSES, 1.0, 1.0)) * 255.0


def render_frames(spec: ScenarioSpec) -> np.ndarray:
    """uint8 frames [F, H, W, 3] at 10 fps; frame k shows the scene at time (k + 0.5) / 10."""
    width, height = spec.frame_size
    n_frames = int(round(spec.duration * VIDEO_FPS))
    out = np.full((n_frames, height, width, 3), float(BACKGROUND))
    cols = np.arange(width)[None, :]
    rows = np.arange(height)[:, None]
    for e in spec.events:
        color = class_color(e.class_id)
        for k in active_frames(e, n_frames, VIDEO_FPS):
            t = (k + 0.5) / VIDEO_FPS
            cx, cy = doa_to_pixel(e.azimuth_at(t), e.elevation, width, height)
            dx = (cols - cx + width / 2) % width - width / 2  # wrap around the seam
            dy = rows - cy
            g = np.exp(-(dx**2 + dy**2) / (2 * BLOB_SIGMA**2))[..., None]
            out[k] += g * (color - BACKGROUND)
    return np.clip(np.round(out), 0, 255).astype(np.uint8)


def blob_centroid(frame: np.ndarray) -> tuple[float, float] | None:
    """(column, row) centroid of the deviation from the background; columns use a circular mean."""
    dev = np.abs(frame.astype(float) - BACKGROUND).sum(axis=-1)
    total = dev.sum()
    if total == 0:
        return None
    h, w = dev.shape
    col_w = dev.sum(axis=0)
    ang = 2 * np.pi * (np.arange(w) + 0.5) / w
    mean_ang = np.arctan2((col_w * np.sin(ang)).sum(), (col_w * np.cos(ang)).sum()) % (2 * np.pi)
    col = mean_ang / (2 * np.pi) * w - 0.5
    row = float((dev.sum(axis=1) * np.arange(h)).sum() / total)
    return float(col), row


@dataclass
class Scene:
    spec: ScenarioSpec
    audio: FoaClip
    frames: np.ndarray
    labels: EventLabelSet = field(repr=False)


def generate_scene(spec: ScenarioSpec) -> Scene:
    return Scene(spec, render_audio(spec), render_frames(spec), render_labels(spec))


def transform_scenario(spec: ScenarioSpec, t: AvcsTransform) -> ScenarioSpec:
    events = []
    for e in spec.events:
        az, el = transform_angles(e.azimuth, e.elevation, t)
        events.append(replace(e, azimuth=float(az), elevation=float(el) + 0.0))
    return replace(spec, events=tuple(events))


def random_scenario(
    rng: np.random.Generator,
    duration: float = 3.0,
    n_events: int = 2,
    classes: tuple[int, ...] | None = None,
    max_elevation: float = 45.0,
    max_rate: float = 0.0,
    snr_db: float = 30.0,
    min_length: float = 1.0,
) -> ScenarioSpec:
    """Draw a valid scenario; onsets/offsets land on 100 ms boundaries."""
    classes = classes or tuple(range(NUM_CLASSES))
    events = []
    steps = int(round(duration / LABEL_HOP))
    min_steps = max(1, int(round(min_length / LABEL_HOP)))
    for _ in range(n_events):
        length = int(rng.integers(min_steps, steps + 1))
        start = int(rng.integers(0, steps - length + 1))
        events.append(EventSpec(
            class_id=int(rng.choice(classes)),
            onset=round(start * LABEL_HOP, 6),
            offset=round((start + length) * LABEL_HOP, 6),
            azimuth=float(np.round(rng.uniform(-180, 180), 3)),
            elevation=float(np.round(rng.uniform(-max_elevation, max_elevation), 3)),
            azimuth_rate=float(np.round(rng.uniform(-max_rate, max_rate), 3)) if max_rate else 0.0,
        ))
    return ScenarioSpec(seed=int(rng.integers(2**31)), duration=duration, events=tuple(events), snr_db=snr_db)


# -- on-disk layout ----------------------------------------------------------

def write_scene(directory, name: str, scene: Scene) -> Path:
    """Write ``name.wav``, ``name.csv``, ``name.json`` and ``name_frames/NNNN.png``."""
    from PIL import Image

    root = Path(directory)
    root.mkdir(parents=True, exist_ok=True)
    write_wav(root / f"{name}.wav", scene.audio)
    write_label_csv(root / f"{name}.csv", scene.labels)
    (root / f"{name}.json").write_text(scene.spec.to_json())
    frame_dir = root / f"{name}_frames"
    frame_dir.mkdir(exist_ok=True)
    for k, frame in enumerate(scene.frames):
        Image.fromarray(frame).save(frame_dir / f"{k:04d}.png")
    return root / f"{name}.wav"


def read_frames(frame_dir) -> np.ndarray:
    from PIL import Image

    paths = sorted(Path(frame_dir).glob("*.png"))
    return np.stack([np.asarray(Image.open(p).convert("RGB")) for p in paths]) if paths else np.zeros((0, 1, 2, 3), np.uint8)


def read_scene(directory, name: str) -> Scene:
    root = Path(directory)
    audio = read_wav(root / f"{name}.wav")
    frames = read_frames(root / f"{name}_frames")
    n_frames = int(round(audio.duration / LABEL_HOP))
    labels = read_label_csv(root / f"{name}.csv", n_frames=n_frames)
    spec_path = root / f"{name}.json"
    spec = ScenarioSpec.from_json(spec_path.read_text()) if spec_path.exists() else ScenarioSpec(duration=audio.duration)
    return Scene(spec, audio, frames, labels)


def list_scenes(directory) -> list[str]:
    return sorted(p.stem for p in Path(directory).glob("*.wav"))
