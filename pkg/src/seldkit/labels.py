"""Event labels, multi-track ACCDOA targets, and the class-wise ADPIT loss."""

from __future__ import annotations

import csv
import itertools
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Iterator, NamedTuple, Sequence

import numpy as np

from .autodiff.tensor import ShapeError, Tensor, _make
from .features import cartesian_to_angles, wrap_azimuth

NUM_CLASSES = 13
NUM_TRACKS = 3
LABEL_HOP = 0.1  # seconds per label frame


class LabelError(ValueError):
    pass


class CapacityError(LabelError):
    """More simultaneous same-class events than output tracks."""


class Event(NamedTuple):
    class_id: int
    source_id: int
    azimuth: float
    elevation: float


@dataclass
class EventLabelSet:
    """Per-frame event lists at 100 ms resolution."""

    frames: list[list[Event]] = field(default_factory=list)
    num_classes: int = NUM_CLASSES

    def __post_init__(self):
        self.frames = [[Event(*e) for e in frame] for frame in self.frames]
        for t, frame in enumerate(self.frames):
            seen = set()
            for e in frame:
                if not 0 <= e.class_id < self.num_classes:
                    raise LabelError(f"frame {t}: class {e.class_id} outside 0..{self.num_classes - 1}")
                if (e.class_id, e.source_id) in seen:
                    raise LabelError(f"frame {t}: duplicate (class, source) {(e.class_id, e.source_id)}")
                seen.add((e.class_id, e.source_id))
                if not (-180.0 <= e.azimuth < 180.0 and -90.0 <= e.elevation <= 90.0):
                    raise LabelError(f"frame {t}: angles out of range ({e.azimuth}, {e.elevation})")

    @classmethod
    def empty(cls, n_frames: int, num_classes: int = NUM_CLASSES) -> "EventLabelSet":
        return cls([[] for _ in range(n_frames)], num_classes)

    @property
    def n_frames(self) -> int:
        return len(self.frames)

    def __len__(self) -> int:
        return len(self.frames)

    def events(self) -> Iterator[tuple[int, Event]]:
        for t, frame in enumerate(self.frames):
            for e in frame:
                yield t, e

    def num_events(self) -> int:
        return sum(len(f) for f in self.frames)

    def slice(self, start: int, stop: int) -> "EventLabelSet":
        """Frames [start, stop), padding with empty frames past the end."""
        out = [list(self.frames[t]) if t < self.n_frames else [] for t in range(start, stop)]
        return EventLabelSet(out, self.num_classes)

    def max_polyphony(self) -> int:
        worst = 0
        for frame in self.frames:
            counts: dict[int, int] = {}
            for e in frame:
                counts[e.class_id] = counts.get(e.class_id, 0) + 1
            worst = max(worst, max(counts.values(), default=0))
        return worst


def unit_vector(azimuth: float, elevation: float) -> np.ndarray:
    az, el = np.radians(azimuth), np.radians(elevation)
    return np.array([np.cos(az) * np.cos(el), np.sin(az) * np.cos(el), np.sin(el)])


def angular_distance(az1, el1, az2, el2):
    """Great-circle distance in degrees between directions given in degrees."""
    a1, e1, a2, e2 = map(np.radians, (az1, el1, az2, el2))
    # haversine form stays accurate for tiny angles
    h = np.sin((e2 - e1) / 2) ** 2 + np.cos(e1) * np.cos(e2) * np.sin((a2 - a1) / 2) ** 2
    return np.degrees(2 * np.arcsin(np.sqrt(np.clip(h, 0.0, 1.0))))


# -- encode / decode --------------------------------------------------------

def _class_groups(frame: Sequence[Event]) -> dict[int, list[Event]]:
    groups: dict[int, list[Event]] = {}
    for e in sorted(frame, key=lambda e: (e.class_id, e.source_id)):
        groups.setdefault(e.class_id, []).append(e)
    return groups


def encode_targets(labels: EventLabelSet, n_tracks: int = NUM_TRACKS, n_classes: int = NUM_CLASSES) -> np.ndarray:
    """Multi-track ACCDOA target, shape [T, N, C, 3].

    Same-class events fill tracks in ascending source_id order; unused
    (track, class) cells are zero.
    """
    out = np.zeros((labels.n_frames, n_tracks, n_classes, 3))
    for t, frame in enumerate(labels.frames):
        for c, group in _class_groups(frame).items():
            if len(group) > n_tracks:
                raise CapacityError(f"frame {t}, class {c}: {len(group)} events exceed {n_tracks} tracks")
            for track, e in enumerate(group):
                out[t, track, c] = unit_vector(e.azimuth, e.elevation)
    return out


@dataclass(frozen=True)
class DecodeConfig:
    activity_threshold: float = 0.5
    merge_angle: float = 15.0

    def __post_init__(self):
        if not 0.0 < self.activity_threshold < 1.0:
            raise ValueError("activity_threshold must lie in (0, 1)")
        if self.merge_angle < 0:
            raise ValueError("merge_angle must be non-negative")


def decode_predictions(out: np.ndarray, cfg: DecodeConfig = DecodeConfig()) -> EventLabelSet:
    """Threshold vector norms, then merge same-class track detections closer than ``merge_angle``."""
    out = np.asarray(out)
    if out.ndim != 4 or out.shape[-1] != 3:
        raise ShapeError(f"decode expects [T, N, C, 3], got {out.shape}")
    n_frames, n_tracks, n_classes, _ = out.shape
    norms = np.linalg.norm(out, axis=-1)
    frames = []
    for t in range(n_frames):
        events = []
        for c in range(n_classes):
            found = []
            for k in range(n_tracks):
                if norms[t, k, c] > cfg.activity_threshold:
                    az, el = cartesian_to_angles(out[t, k, c] / norms[t, k, c])
                    found.append((norms[t, k, c], k, az, el))
            found.sort(key=lambda d: (-d[0], d[1]))
            kept: list[tuple] = []
            for cand in found:
                if all(angular_distance(cand[2], cand[3], k[2], k[3]) > cfg.merge_angle for k in kept):
                    kept.append(cand)
            for _, k, az, el in sorted(kept, key=lambda d: d[1]):
                events.append(Event(c, k, az, el))
        frames.append(events)
    return EventLabelSet(frames, n_classes)


# -- ADPIT ------------------------------------------------------------------

@lru_cache(maxsize=None)
def surjections(n_tracks: int, k: int) -> np.ndarray:
    """All maps track -> event index that hit every one of ``k`` events, shape [M, n_tracks]."""
    if k == 0:
        return np.zeros((0, n_tracks), dtype=int)
    maps = [m for m in itertools.product(range(k), repeat=n_tracks) if len(set(m)) == k]
    return np.array(maps, dtype=int).reshape(-1, n_tracks)


def _sorted_track_sum(sq: np.ndarray) -> np.ndarray:
    # sum per-track costs in sorted order so the result is independent of track order bit-for-bit
    return np.sort(sq, axis=-1).sum(axis=-1)


def adpit_targets(pred: np.ndarray, labels: EventLabelSet) -> tuple[np.ndarray, np.ndarray]:
    """Pick, for every (frame, class), the candidate target closest to ``pred``.

    Returns the chosen target [T, N, C, 3] and per-(frame, class) costs [T, C]
    where a cost is the mean squared error over the N x 3 entries.
    """
    n_frames, n_tracks, n_classes, _ = pred.shape
    if labels.n_frames != n_frames:
        raise ShapeError(f"prediction has {n_frames} frames, labels have {labels.n_frames}")
    target = np.zeros_like(pred)
    per_track = (pred ** 2).sum(axis=-1)  # [T, N, C]
    costs = _sorted_track_sum(np.moveaxis(per_track, 1, -1)) / (3 * n_tracks)  # [T, C]
    for t, frame in enumerate(labels.frames):
        for c, group in _class_groups(frame).items():
            k = len(group)
            if k > n_tracks:
                raise CapacityError(f"frame {t}, class {c}: {k} events exceed {n_tracks} tracks")
            vecs = np.stack([unit_vector(e.azimuth, e.elevation) for e in group])
            cands = vecs[surjections(n_tracks, k)]  # [M, N, 3]
            sq = ((pred[t, :, c][None] - cands) ** 2).sum(axis=-1)  # [M, N]
            cand_costs = _sorted_track_sum(sq) / (3 * n_tracks)
            best = int(np.argmin(cand_costs))
            target[t, :, c] = cands[best]
            costs[t, c] = cand_costs[best]
    return target, costs


def adpit_loss(pred: Tensor, labels: EventLabelSet | Sequence[EventLabelSet]) -> Tensor:
    """Class-wise auxiliary-duplicating PIT loss.

    ``pred`` is [T, N, C, 3] with one label set, or [B, T, N, C, 3] with a
    sequence of B label sets. For each frame and class the candidate targets
    are every surjective assignment of the N tracks onto the active events
    (the all-zero target when none are active); the loss is the mean over
    frames and classes (and batch) of the smallest candidate MSE. The
    gradient flows only through the selected candidate.
    """
    batched = pred.ndim == 5
    if not batched:
        if pred.ndim != 4:
            raise ShapeError(f"adpit_loss expects [T, N, C, 3] or [B, T, N, C, 3], got {pred.shape}")
        labels = [labels]
    labels = list(labels)
    data = pred.data if batched else pred.data[None]
    if len(labels) != data.shape[0]:
        raise ShapeError(f"batch of {data.shape[0]} predictions but {len(labels)} label sets")
    if data.shape[-1] != 3:
        raise ShapeError(f"last axis must hold 3 coordinates, got {data.shape}")
    targets, costs = zip(*(adpit_targets(p, l) for p, l in zip(data, labels)))
    target = np.stack(targets)
    value = np.asarray(np.stack(costs).mean(), dtype=pred.dtype)
    diff = (data - target).reshape(pred.shape)
    scale = 2.0 / diff.size

    return _make(value, (pred,), lambda g: (g * scale * diff,), "adpit_loss")


# -- CSV --------------------------------------------------------------------

def read_label_csv(path, n_frames: int | None = None, num_classes: int = NUM_CLASSES) -> EventLabelSet:
    """Read ``frame,class,source,azimuth,elevation`` rows (no header)."""
    rows = []
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), 1):
            if not row or not "".join(row).strip():
                continue
            if len(row) < 5:
                raise LabelError(f"{path}:{lineno}: expected 5 fields, got {len(row)}")
            try:
                frame, cls, src = (int(float(v)) for v in row[:3])
                az, el = float(row[3]), float(row[4])
            except ValueError as exc:
                raise LabelError(f"{path}:{lineno}: {exc}") from exc
            rows.append((frame, Event(cls, src, float(wrap_azimuth(az)), el)))
    last = max((r[0] for r in rows), default=-1) + 1
    total = max(last, n_frames or 0)
    frames: list[list[Event]] = [[] for _ in range(total)]
    for frame, ev in rows:
        frames[frame].append(ev)
    return EventLabelSet(frames, num_classes)


def _fmt(v: float) -> str:
    return "%.10g" % v


def write_label_csv(path, labels: EventLabelSet) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        for t, e in labels.events():
            writer.writerow([t, e.class_id, e.source_id, _fmt(e.azimuth), _fmt(e.elevation)])
