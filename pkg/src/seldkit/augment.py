"""Audio-visual channel swap: joint rotation/flip of FOA audio, labels, and 360° frames.

The eight transforms are the four azimuth rotations by multiples of 90°
combined with an optional elevation flip. Each one is an exact channel
permutation/negation on FOA audio and an exact pixel operation on an
equirectangular frame, so all three modalities stay aligned.

Frame convention: column 0 is azimuth -180° and azimuth grows with the
column index; row 0 is elevation +90°.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

from .features import FoaClip, W, X, Y, Z, wrap_azimuth
from .labels import Event, EventLabelSet


class AugmentInputError(ValueError):
    pass


class AvcsTransform(NamedTuple):
    rotation_k: int = 0
    elev_flip: bool = False

    @property
    def index(self) -> int:
        return (self.rotation_k % 4) + 4 * int(self.elev_flip)

    @classmethod
    def from_index(cls, i: int) -> "AvcsTransform":
        return cls(i % 4, bool(i // 4))

    @classmethod
    def parse(cls, text: str) -> "AvcsTransform":
        """Parse ``"k,flip"`` such as ``"1,0"`` or ``"3,true"``."""
        parts = [p.strip().lower() for p in text.split(",")]
        if len(parts) != 2:
            raise ValueError(f"transform must look like 'k,flip', got {text!r}")
        flags = {"0": False, "false": False, "no": False, "1": True, "true": True, "yes": True}
        if parts[1] not in flags:
            raise ValueError(f"bad flip flag {parts[1]!r}")
        try:
            k = int(parts[0])
        except ValueError:
            raise ValueError(f"bad rotation {parts[0]!r}") from None
        if not 0 <= k < 4:
            raise ValueError(f"rotation k must be 0..3, got {k}")
        return cls(k, flags[parts[1]])

    def compose(self, other: "AvcsTransform") -> "AvcsTransform":
        """Transform equivalent to applying ``other`` first, then ``self``.

        Rotations and the elevation flip act on independent axes, so they commute.
        """
        return AvcsTransform((self.rotation_k + other.rotation_k) % 4, self.elev_flip != other.elev_flip)


IDENTITY = AvcsTransform(0, False)
ALL_TRANSFORMS = tuple(AvcsTransform.from_index(i) for i in range(8))


def transform_angles(azimuth, elevation, t: AvcsTransform):
    az = wrap_azimuth(np.asarray(azimuth, dtype=float) + 90.0 * t.rotation_k)
    el = -np.asarray(elevation, dtype=float) if t.elev_flip else np.asarray(elevation, dtype=float)
    return az, el


def transform_labels(labels: EventLabelSet, t: AvcsTransform) -> EventLabelSet:
    frames = []
    for frame in labels.frames:
        out = []
        for e in frame:
            az, el = transform_angles(e.azimuth, e.elevation, t)
            out.append(Event(e.class_id, e.source_id, float(az), float(el) + 0.0))
        frames.append(out)
    return EventLabelSet(frames, labels.num_classes)


def transform_foa(clip: FoaClip, t: AvcsTransform) -> FoaClip:
    s = clip.samples
    if s.shape[0] != 4:
        raise AugmentInputError(f"expected 4 FOA channels, got {s.shape[0]}")
    if t == IDENTITY:
        return clip
    x, y = s[X], s[Y]
    k = t.rotation_k % 4
    if k == 0:
        x2, y2 = x, y
    elif k == 1:
        x2, y2 = -y, x
    elif k == 2:
        x2, y2 = -x, -y
    else:
        x2, y2 = y, -x
    z2 = -s[Z] if t.elev_flip else s[Z]
    out = np.empty_like(s)
    out[W], out[Y], out[Z], out[X] = s[W], y2, z2, x2
    return FoaClip(out, clip.sample_rate)


def _check_frame(frame: np.ndarray) -> None:
    if frame.ndim < 2 or frame.shape[1] != 2 * frame.shape[0]:
        raise AugmentInputError(f"equirectangular frame must be H x 2H, got {frame.shape}")
    if frame.shape[1] % 4:
        raise AugmentInputError(f"frame width {frame.shape[1]} not divisible by 4")


def transform_frame(frame: np.ndarray, t: AvcsTransform) -> np.ndarray:
    """Rotate a [H, W, ...] equirectangular frame by circular column shift and flip rows."""
    frame = np.asarray(frame)
    _check_frame(frame)
    out = np.roll(frame, (t.rotation_k % 4) * frame.shape[1] // 4, axis=1)
    return out[::-1] if t.elev_flip else out


def transform_frames(frames: np.ndarray, t: AvcsTransform) -> np.ndarray:
    """Apply ``transform_frame`` to a [F, H, W, ...] sequence."""
    frames = np.asarray(frames)
    if frames.ndim < 3:
        raise AugmentInputError(f"frame sequence must be [F, H, W, ...], got {frames.shape}")
    _check_frame(frames[0])
    out = np.roll(frames, (t.rotation_k % 4) * frames.shape[2] // 4, axis=2)
    return out[:, ::-1] if t.elev_flip else out


def augment_example(audio: FoaClip, labels: EventLabelSet, frames: np.ndarray | None, t: AvcsTransform):
    """Apply the same transform to audio, labels, and (optionally) the frame sequence."""
    new_frames = None if frames is None else transform_frames(frames, t)
    return transform_foa(audio, t), transform_labels(labels, t), new_frames


def doa_to_pixel(azimuth, elevation, width: int, height: int):
    """Continuous pixel coordinates (column, row) of a direction; integers index pixel centres."""
    col = (np.asarray(azimuth) + 180.0) / 360.0 * width - 0.5
    row = (90.0 - np.asarray(elevation)) / 180.0 * height - 0.5
    return col, row


def pixel_to_doa(col, row, width: int, height: int):
    az = wrap_azimuth((np.asarray(col) + 0.5) / width * 360.0 - 180.0)
    el = 90.0 - (np.asarray(row) + 0.5) / height * 180.0
    return az, el

