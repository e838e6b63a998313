"""Audio-only, visual-only and audio-visual SELD networks.

Audio path: residual CNN (4 blocks, each halving time and frequency) with
frequency pooling, then a Conformer. Visual path: each 448x224 frame is split
into left/right 224x224 halves, each half is embedded with shared weights,
the two vectors are concatenated and projected, then a Conformer runs over
time. Audio-visual models fuse the two sequences; all variants end in a
two-layer m-ACCDOA head.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .autodiff import ops as F
from .autodiff.nn import (
    BatchNorm, BiGRU, ConfigError, Conformer, Conv2d, FeedForward, LayerNorm, Linear, Module,
    MultiHeadAttention,
)
from .autodiff.tensor import ShapeError, Tensor

VARIANTS = ("AO", "VO", "AV")
FUSIONS = ("av_conformer", "cmaf", "ca", "gru")
VISUAL_ENCODERS = ("patch_projection", "split_pool_cnn")


@dataclass
class ModelConfig:
    variant: str = "AV"
    fusion: str = "av_conformer"
    visual_encoder: str = "patch_projection"
    embed_dim: int = 512
    fusion_layers: int = 4
    encoder_layers: int = 4
    heads: int = 8
    tracks: int = 3
    classes: int = 13
    kernel: int = 51
    dropout: float = 0.05
    cnn_channels: tuple[int, ...] = ()  # empty: (D/8, D/4, D/2, D)
    input_channels: int = 7
    mel_bins: int = 128
    frame_size: tuple[int, int] = (448, 224)  # (W, H)
    patch: int = 16
    visual_channels: tuple[int, ...] = (16, 32)
    temporal_stride: int = 1
    dtype: str = "float32"

    def __post_init__(self):
        self.cnn_channels = tuple(self.cnn_channels) or tuple(
            self.embed_dim // d for d in (8, 4, 2, 1)
        )
        self.frame_size = tuple(self.frame_size)
        self.visual_channels = tuple(self.visual_channels)
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.variant == "AV":
            if self.fusion not in FUSIONS:
                raise ConfigError(f"AV models need fusion in {FUSIONS}, got {self.fusion!r}")
        if self.variant in ("VO", "AV") and self.visual_encoder not in VISUAL_ENCODERS:
            raise ConfigError(f"visual_encoder must be one of {VISUAL_ENCODERS}")
        if self.cnn_channels[-1] != self.embed_dim:
            raise ConfigError(f"last CNN width {self.cnn_channels[-1]} must equal embed_dim {self.embed_dim}")
        if self.embed_dim % self.heads:
            raise ConfigError(f"embed_dim {self.embed_dim} not divisible by {self.heads} heads")
        w, h = self.frame_size
        if w != 2 * h or h % self.patch:
            raise ConfigError(f"frame size {w}x{h} must be 2:1 with height divisible by patch {self.patch}")

    @property
    def time_reduction(self) -> int:
        return 2 ** len(self.cnn_channels)

    @property
    def np_dtype(self):
        return np.dtype(self.dtype)

    def to_dict(self) -> dict:
        return asdict(self)


class ResidualConvBlock(Module):
    """conv3x3 -> ReLU -> conv3x3, plus (1x1-projected) skip, then avg-pool /2, BN, ReLU."""

    def __init__(self, c_in: int, c_out: int, rng, dtype):
        self.conv1 = Conv2d(c_in, c_out, 3, rng, dtype=dtype)
        self.conv2 = Conv2d(c_out, c_out, 3, rng, dtype=dtype)
        self.skip = Conv2d(c_in, c_out, 1, rng, padding=0, dtype=dtype) if c_in != c_out else None
        self.bn = BatchNorm(c_out, dtype)

    def forward(self, x: Tensor) -> Tensor:
        h = self.conv2(F.relu(self.conv1(x)))
        h = h + (self.skip(x) if self.skip is not None else x)
        return F.relu(self.bn(F.avg_pool2d(h, 2)))


class AudioEncoder(Module):
    """[B, 7, T_in, F_in] features -> [B, T_in / 16, D] embedding."""

    def __init__(self, cfg: ModelConfig, rng):
        dt = cfg.np_dtype
        widths = (cfg.input_channels,) + cfg.cnn_channels
        self.blocks = [ResidualConvBlock(a, b, rng, dt) for a, b in zip(widths[:-1], widths[1:])]
        self.conformer = Conformer(cfg.embed_dim, rng, cfg.encoder_layers, cfg.heads, cfg.kernel, cfg.dropout, dt)
        self.reduction = cfg.time_reduction

    def embed(self, feats: Tensor) -> Tensor:
        """CNN and frequency pooling only (no Conformer)."""
        if feats.ndim != 4:
            raise ShapeError(f"audio encoder expects [B, C, T_in, F_in], got {feats.shape}")
        _, _, t_in, f_in = feats.shape
        if t_in % self.reduction or f_in % self.reduction:
            raise ShapeError(f"T_in={t_in} and F_in={f_in} must be divisible by {self.reduction}")
        x = feats.transpose(0, 2, 3, 1)  # channels last
        for block in self.blocks:
            x = block(x)
        return x.mean(axis=2)

    def forward(self, feats: Tensor) -> Tensor:
        return self.conformer(self.embed(feats))


def _raw_frames(frames) -> np.ndarray:
    return frames.data if isinstance(frames, Tensor) else np.asarray(frames)


def _block_mean(x: np.ndarray, k: int, dtype) -> np.ndarray:
    """Pixel values of [..., H, W, C] mapped to [-0.5, 0.5] and averaged over k x k blocks.

    uint8 input is read as 0..255; float input is taken to be in [0, 1].
    """
    *lead, h, w, c = x.shape
    scale = 255.0 if x.dtype == np.uint8 else 1.0
    # two single-axis sums are much faster than one strided multi-axis reduce
    s = x.astype(dtype).reshape(*lead, h // k, k, w, c).sum(axis=-3)
    s = s.reshape(*lead, h // k, w // k, k, c).sum(axis=-2)
    return s * (1.0 / (k * k * scale)) - 0.5


class PatchProjection(Module):
    """16x16 average-pooled patches of one 224x224 half, flattened and projected."""

    def __init__(self, cfg: ModelConfig, rng):
        side = cfg.frame_size[1] // cfg.patch
        self.patch = cfg.patch
        self.proj = Linear(side * side * 3, cfg.embed_dim, rng, cfg.np_dtype)
        self.dtype = cfg.np_dtype

    def forward(self, halves: np.ndarray) -> Tensor:
        pooled = _block_mean(halves, self.patch, self.dtype)
        flat = pooled.reshape(pooled.shape[:-3] + (-1,))
        return self.proj(Tensor(flat))


class SplitPoolCNN(Module):
    """Small trainable conv stack with global average pooling, applied per half."""

    def __init__(self, cfg: ModelConfig, rng):
        dt = cfg.np_dtype
        widths = (3,) + cfg.visual_channels
        self.convs = [Conv2d(a, b, 3, rng, dtype=dt) for a, b in zip(widths[:-1], widths[1:])]
        self.proj = Linear(widths[-1], cfg.embed_dim, rng, dt)
        self.dtype = dt

    def forward(self, halves: np.ndarray) -> Tensor:
        lead = halves.shape[:-3]
        x = _block_mean(halves, 4, self.dtype)
        x = Tensor(x.reshape((-1,) + x.shape[-3:]))
        for conv in self.convs:
            x = F.avg_pool2d(F.relu(conv(x)), 2)
        pooled = x.mean(axis=(1, 2))
        return self.proj(pooled.reshape(lead + (pooled.shape[-1],)))


def interpolation_matrix(n_in: int, n_out: int) -> np.ndarray:
    """[n_out, n_in] linear interpolation between sample centres."""
    pos = (np.arange(n_out) + 0.5) * n_in / n_out - 0.5
    pos = np.clip(pos, 0, n_in - 1)
    lo = np.floor(pos).astype(int)
    hi = np.minimum(lo + 1, n_in - 1)
    frac = pos - lo
    m = np.zeros((n_out, n_in))
    m[np.arange(n_out), lo] += 1 - frac
    m[np.arange(n_out), hi] += frac
    return m


class VisualEmbedder(Module):
    """[B, T, H, W, 3] frames -> [B, T, D] embedding."""

    def __init__(self, cfg: ModelConfig, rng):
        dt = cfg.np_dtype
        self.frame_size = cfg.frame_size
        self.half = PatchProjection(cfg, rng) if cfg.visual_encoder == "patch_projection" else SplitPoolCNN(cfg, rng)
        self.merge = Linear(2 * cfg.embed_dim, cfg.embed_dim, rng, dt)
        self.conformer = Conformer(cfg.embed_dim, rng, cfg.encoder_layers, cfg.heads, cfg.kernel, cfg.dropout, dt)
        self.temporal_stride = cfg.temporal_stride if cfg.visual_encoder == "split_pool_cnn" else 1

    def half_vectors(self, frames) -> tuple[Tensor, Tensor]:
        x = _raw_frames(frames)
        w, h = self.frame_size
        if x.ndim != 5 or x.shape[2:] != (h, w, 3):
            raise ShapeError(f"visual embedder expects [B, T, {h}, {w}, 3] frames, got {x.shape}")
        return self.half(x[:, :, :, : w // 2]), self.half(x[:, :, :, w // 2:])

    def embed(self, frames) -> Tensor:
        """Per-frame embedding before the Conformer."""
        left, right = self.half_vectors(frames)
        x = self.merge(F.concat([left, right], axis=-1))
        s = self.temporal_stride
        if s > 1:
            b, t, d = x.shape
            if t % s:
                raise ShapeError(f"{t} frames not divisible by temporal stride {s}")
            coarse = x.reshape(b, t // s, s, d).mean(axis=2)
            interp = interpolation_matrix(t // s, t).astype(x.dtype)
            x = Tensor(interp) @ coarse
        return x

    def forward(self, frames) -> Tensor:
        return self.conformer(self.embed(frames))


class CmafBlock(Module):
    """One stream of a cross-modal attentive fusion layer.

    out = a + MHSA(LN a) + MHCA(LN a -> LN b), followed by a residual
    feed-forward. With ``self_attention=False`` the MHSA branch is dropped.
    """

    def __init__(self, dim: int, heads: int, rng, dtype, self_attention: bool = True, dropout: float = 0.0):
        self.norm_q = LayerNorm(dim, dtype)
        self.norm_kv = LayerNorm(dim, dtype)
        self.mhsa = MultiHeadAttention(dim, heads, rng, dtype) if self_attention else None
        self.mhca = MultiHeadAttention(dim, heads, rng, dtype)
        self.ff = FeedForward(dim, rng, dropout=dropout, dtype=dtype)

    def forward(self, a: Tensor, b: Tensor) -> Tensor:
        an = self.norm_q(a)
        y = a + self.mhca(an, self.norm_kv(b))
        if self.mhsa is not None:
            y = y + self.mhsa(an)
        return y + self.ff(y)


class CmafFusion(Module):
    def __init__(self, cfg: ModelConfig, rng, self_attention: bool = True):
        dt = cfg.np_dtype
        d = cfg.embed_dim
        self.audio_blocks = []
        self.visual_blocks = []
        for _ in range(cfg.fusion_layers):
            self.audio_blocks.append(CmafBlock(d, cfg.heads, rng, dt, self_attention, cfg.dropout))
            self.visual_blocks.append(CmafBlock(d, cfg.heads, rng, dt, self_attention, cfg.dropout))

    def forward(self, a: Tensor, v: Tensor) -> Tensor:
        for ab, vb in zip(self.audio_blocks, self.visual_blocks):
            a, v = ab(a, v), vb(v, a)
        return F.concat([a, v], axis=-1)


class ConformerFusion(Module):
    def __init__(self, cfg: ModelConfig, rng):
        self.conformer = Conformer(2 * cfg.embed_dim, rng, cfg.fusion_layers, cfg.heads, cfg.kernel,
                                   cfg.dropout, cfg.np_dtype)

    def forward(self, a: Tensor, v: Tensor) -> Tensor:
        return self.conformer(F.concat([a, v], axis=-1))


class GruFusion(Module):
    def __init__(self, cfg: ModelConfig, rng):
        self.gru = BiGRU(2 * cfg.embed_dim, 2 * cfg.embed_dim, rng, layers=2, dtype=cfg.np_dtype)

    def forward(self, a: Tensor, v: Tensor) -> Tensor:
        return self.gru(F.concat([a, v], axis=-1))


def build_fusion(cfg: ModelConfig, rng) -> Module:
    if cfg.fusion == "av_conformer":
        return ConformerFusion(cfg, rng)
    if cfg.fusion == "cmaf":
        return CmafFusion(cfg, rng, self_attention=True)
    if cfg.fusion == "ca":
        return CmafFusion(cfg, rng, self_attention=False)
    if cfg.fusion == "gru":
        return GruFusion(cfg, rng)
    raise ConfigError(f"unknown fusion {cfg.fusion!r}")


class AccdoaHead(Module):
    """Linear + ReLU, linear + tanh, reshaped to [..., T, N, C, 3]."""

    def __init__(self, d_in: int, hidden: int, tracks: int, classes: int, rng, dtype):
        self.fc1 = Linear(d_in, hidden, rng, dtype)
        self.fc2 = Linear(hidden, tracks * classes * 3, rng, dtype)
        self.tracks = tracks
        self.classes = classes

    def forward(self, x: Tensor) -> Tensor:
        y = F.tanh(self.fc2(F.relu(self.fc1(x))))
        return y.reshape(x.shape[:-1] + (self.tracks, self.classes, 3))


class SeldModel(Module):
    def __init__(self, cfg: ModelConfig, seed: int = 0):
        self.cfg = cfg
        rng = np.random.default_rng(seed)
        d = cfg.embed_dim
        dt = cfg.np_dtype
        self.audio = AudioEncoder(cfg, rng) if cfg.variant in ("AO", "AV") else None
        self.visual = VisualEmbedder(cfg, rng) if cfg.variant in ("VO", "AV") else None
        if cfg.variant == "AV":
            self.fusion = build_fusion(cfg, rng)
            self.depth_match = None
            head_in = 2 * d
        else:
            self.fusion = None
            self.depth_match = Conformer(d, rng, cfg.fusion_layers, cfg.heads, cfg.kernel, cfg.dropout, dt)
            head_in = d
        self.head = AccdoaHead(head_in, d, cfg.tracks, cfg.classes, rng, dt)

    def _audio_input(self, features) -> Tensor:
        arr = features.data if isinstance(features, Tensor) else np.asarray(features)
        return Tensor(arr.astype(self.cfg.np_dtype, copy=False))

    def fused(self, features=None, frames=None) -> Tensor:
        """Sequence fed to the head: [B, T, 2D] for AV, [B, T, D] otherwise."""
        cfg = self.cfg
        if cfg.variant in ("AO", "AV") and features is None:
            raise ConfigError(f"{cfg.variant} model needs audio features")
        if cfg.variant in ("VO", "AV") and frames is None:
            raise ConfigError(f"{cfg.variant} model needs video frames")
        a = self.audio(self._audio_input(features)) if self.audio is not None else None
        v = self.visual(frames) if self.visual is not None else None
        if cfg.variant == "AV":
            if a.shape[:2] != v.shape[:2]:
                raise ShapeError(f"audio embedding {a.shape} and visual embedding {v.shape} disagree in [B, T]")
            return self.fusion(a, v)
        return self.depth_match(a if a is not None else v)

    def forward(self, features=None, frames=None) -> Tensor:
        """Batched ([B, ...]) or single-example inputs; output [B?, T, N, C, 3]."""
        single = False
        if features is not None and np.ndim(features.data if isinstance(features, Tensor) else features) == 3:
            features = np.asarray(features)[None]
            single = True
        if frames is not None and np.ndim(frames) == 4:
            frames = np.asarray(frames)[None]
            single = True
        out = self.head(self.fused(features, frames))
        return out[0] if single else out


def parameter_groups(model: Module) -> dict[str, list[str]]:
    """Parameter names grouped by the layer class that owns them."""
    groups: dict[str, list[str]] = {}

    def walk(mod: Module, prefix: str):
        for name, value in mod._children():
            if isinstance(value, Module):
                walk(value, f"{prefix}{name}.")
            elif value.requires_grad:
                groups.setdefault(type(mod).__name__, []).append(f"{prefix}{name}")

    walk(model, "")
    return groups
