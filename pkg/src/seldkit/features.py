"""FOA audio to the 7-channel log-mel + intensity-vector feature tensor.

Channel convention throughout is ACN/SN3D: rows of a clip are (W, Y, Z, X).
A plane wave from azimuth ``az`` and elevation ``el`` encodes as
W = s, Y = s sin(az) cos(el), Z = s sin(el), X = s cos(az) cos(el).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

W, Y, Z, X = 0, 1, 2, 3
SAMPLE_RATE = 24000


class FeatureInputError(ValueError):
    """Invalid audio handed to the feature pipeline."""


@dataclass(frozen=True)
class FoaClip:
    samples: np.ndarray  # [4, S]
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        s = np.asarray(self.samples)
        if s.ndim != 2 or s.shape[0] != 4:
            raise FeatureInputError(f"FOA clip needs 4 channels (W, Y, Z, X), got shape {s.shape}")
        if s.shape[1] == 0:
            raise FeatureInputError("FOA clip is empty")
        if not np.all(np.isfinite(s)):
            raise FeatureInputError("FOA clip contains non-finite samples")
        object.__setattr__(self, "samples", s)

    @property
    def num_samples(self) -> int:
        return self.samples.shape[1]

    @property
    def duration(self) -> float:
        return self.num_samples / self.sample_rate


@dataclass(frozen=True)
class StftConfig:
    n_fft: int = 512
    hop: int = 150
    mel_bins: int = 128
    fmin: float = 20.0
    fmax: float = 12000.0
    sample_rate: int = SAMPLE_RATE
    log_floor: float = 1e-10
    iv_eps: float = 1e-10  # relative to the mean time-frequency energy

    def __post_init__(self):
        if self.hop <= 0 or self.hop > self.n_fft:
            raise ValueError(f"hop must be in (0, n_fft], got {self.hop}")
        if self.mel_bins <= 0:
            raise ValueError("mel_bins must be positive")
        if not 0 <= self.fmin < self.fmax <= self.sample_rate / 2:
            raise ValueError(f"mel range ({self.fmin}, {self.fmax}) outside (0, Nyquist)")

    @property
    def n_bins(self) -> int:
        return self.n_fft // 2 + 1

    @property
    def frames_per_second(self) -> float:
        return self.sample_rate / self.hop


def num_frames(num_samples: int, hop: int) -> int:
    return -(-num_samples // hop)


def stft(clip: FoaClip, cfg: StftConfig = StftConfig()) -> np.ndarray:
    """Complex one-sided STFT, shape [4, T_in, n_fft/2 + 1].

    Frame t is centred on sample ``t * hop`` (reflection padding at both
    ends), giving ceil(S / hop) frames: 480 for a 3 s clip at 24 kHz.
    """
    x = clip.samples
    n = cfg.n_fft
    half = n // 2
    t_in = num_frames(x.shape[1], cfg.hop)
    right = max(0, (t_in - 1) * cfg.hop + half - (x.shape[1] - 1))
    mode = "reflect" if x.shape[1] > 1 else "constant"
    padded = np.pad(x, ((0, 0), (half, right)), mode=mode)
    starts = np.arange(t_in) * cfg.hop
    frames = padded[:, starts[:, None] + np.arange(n)[None, :]]
    window = np.hanning(n + 1)[:-1]  # periodic Hann
    return np.fft.rfft(frames * window, axis=-1)


def mel_filterbank(cfg: StftConfig = StftConfig()) -> np.ndarray:
    """Triangular HTK-mel filters, shape [mel_bins, n_fft/2 + 1], peak weight 1."""
    def hz_to_mel(f):
        return 2595.0 * np.log10(1.0 + np.asarray(f) / 700.0)

    def mel_to_hz(m):
        return 700.0 * (10.0 ** (np.asarray(m) / 2595.0) - 1.0)

    edges = mel_to_hz(np.linspace(hz_to_mel(cfg.fmin), hz_to_mel(cfg.fmax), cfg.mel_bins + 2))
    freqs = np.arange(cfg.n_bins) * cfg.sample_rate / cfg.n_fft
    lo, mid, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (freqs[None, :] - lo) / (mid - lo)
    falling = (hi - freqs[None, :]) / (hi - mid)
    return np.clip(np.minimum(rising, falling), 0.0, None)


def _check_bins(spec: np.ndarray, cfg: StftConfig) -> None:
    if spec.ndim != 3 or spec.shape[-1] != cfg.n_bins:
        raise FeatureInputError(f"expected spectrum [C, T, {cfg.n_bins}], got {spec.shape}")


def logmel(spec: np.ndarray, cfg: StftConfig = StftConfig()) -> np.ndarray:
    """Natural-log mel power, shape [C, T_in, mel_bins]."""
    _check_bins(spec, cfg)
    power = np.abs(spec) ** 2
    return np.log(power @ mel_filterbank(cfg).T + cfg.log_floor)


def intensity_vectors(spec: np.ndarray, cfg: StftConfig = StftConfig()) -> np.ndarray:
    """Normalized active intensity per mel band, shape [3, T_in, mel_bins], order (x, y, z).

    Each TF bin contributes Re(conj(W) [X, Y, Z]) divided by the total
    energy |W|^2 + (|X|^2 + |Y|^2 + |Z|^2) / 3 (plus ``iv_eps`` times the mean
    of that energy over the whole spectrogram); bins are then averaged per
    mel band with the filterbank weights. Bands whose filters cover no FFT
    bin stay zero.
    """
    _check_bins(spec, cfg)
    if spec.shape[0] != 4:
        raise FeatureInputError(f"intensity vectors need 4 FOA channels, got {spec.shape[0]}")
    w = spec[W]
    dipoles = spec[[X, Y, Z]]
    active = np.real(np.conj(w)[None] * dipoles)
    energy = np.abs(w) ** 2 + (np.abs(dipoles) ** 2).sum(axis=0) / 3.0
    # the regularizer scales with the clip's mean energy so the result is invariant to gain
    floor = cfg.iv_eps * max(float(energy.mean()), np.finfo(float).tiny)
    iv = active / (energy + floor)
    fb = mel_filterbank(cfg)
    weight = fb.sum(axis=1)
    banded = (iv @ fb.T) / np.where(weight > 0, weight, 1.0)
    return np.clip(banded, -1.0, 1.0)


@dataclass(frozen=True)
class SpectralFeatures:
    data: np.ndarray  # [7, T_in, F_in]

    @property
    def frames(self) -> int:
        return self.data.shape[1]

    @property
    def mel_bins(self) -> int:
        return self.data.shape[2]

    @property
    def logmel(self) -> np.ndarray:
        return self.data[:4]

    @property
    def iv(self) -> np.ndarray:
        return self.data[4:]


def extract_features(clip: FoaClip, cfg: StftConfig = StftConfig()) -> SpectralFeatures:
    spec = stft(clip, cfg)
    return SpectralFeatures(np.concatenate([logmel(spec, cfg), intensity_vectors(spec, cfg)], axis=0))


def estimate_doa(clip: FoaClip, cfg: StftConfig = StftConfig(), frames: slice | None = None) -> tuple[float, float]:
    """Broadband DOA (azimuth, elevation) in degrees from mel-band intensity vectors.

    Bands are weighted by their W-channel mel power so silent bands do not
    dilute the estimate.
    """
    spec = stft(clip, cfg)
    if frames is not None:
        spec = spec[:, frames]
    iv = intensity_vectors(spec, cfg)
    weight = np.abs(spec[W]) ** 2 @ mel_filterbank(cfg).T
    v = (iv * weight[None]).sum(axis=(1, 2))
    return cartesian_to_angles(v)


def cartesian_to_angles(v) -> tuple[float, float]:
    x, y, z = v
    az = np.degrees(np.arctan2(y, x))
    el = np.degrees(np.arctan2(z, np.hypot(x, y)))
    return float(wrap_azimuth(az)), float(el)


def wrap_azimuth(az):
    """Map degrees into [-180, 180)."""
    out = (np.asarray(az, dtype=float) + 180.0) % 360.0 - 180.0
    return np.where(out >= 180.0, out - 360.0, out)


def plane_wave(signal: np.ndarray, azimuth: float, elevation: float) -> np.ndarray:
    """SN3D first-order encoding of a mono signal, rows (W, Y, Z, X)."""
    az, el = np.radians(azimuth), np.radians(elevation)
    gains = np.array([1.0, np.sin(az) * np.cos(el), np.sin(el), np.cos(az) * np.cos(el)])
    return gains[:, None] * np.asarray(signal)[None, :]


# -- file formats -----------------------------------------------------------

def read_wav(path) -> FoaClip:
    """Read a 4-channel WAV (PCM16 or float32) into a clip."""
    from scipy.io import wavfile

    rate, data = wavfile.read(path)
    if data.ndim != 2 or data.shape[1] != 4:
        raise FeatureInputError(f"{path}: expected 4 channels, got shape {data.shape}")
    if data.dtype == np.int16:
        samples = data.astype(np.float64) / 32768.0
    elif data.dtype == np.float32 or data.dtype == np.float64:
        samples = data.astype(np.float64)
    else:
        raise FeatureInputError(f"{path}: unsupported sample format {data.dtype}")
    return FoaClip(samples.T, int(rate))


def write_wav(path, clip: FoaClip, pcm16: bool = False) -> None:
    from scipy.io import wavfile

    data = clip.samples.T
    if pcm16:
        data = np.clip(np.round(data * 32767.0), -32768, 32767).astype(np.int16)
    else:
        data = data.astype(np.float32)
    wavfile.write(path, clip.sample_rate, data)


def save_features(path, feats: SpectralFeatures) -> None:
    """Write ``<u2 channels><u2 mel_bins><u4 frames>`` then float32 LE data in [C, T, F] order."""
    c, t, f = feats.data.shape
    with open(path, "wb") as fh:
        fh.write(struct.pack("<HHI", c, f, t))
        fh.write(np.ascontiguousarray(feats.data, dtype="<f4").tobytes())


def load_features(path) -> SpectralFeatures:
    raw = Path(path).read_bytes()
    c, f, t = struct.unpack_from("<HHI", raw, 0)
    expected = 8 + 4 * c * t * f
    if len(raw) != expected:
        raise FeatureInputError(f"{path}: header says {c}x{t}x{f} but payload is {len(raw) - 8} bytes")
    data = np.frombuffer(raw, dtype="<f4", offset=8).reshape(c, t, f)
    return SpectralFeatures(data.astype(np.float32))
