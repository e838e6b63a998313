"""Neural layers built on the autodiff tensor.

Layers are small classes holding their parameters as ``Tensor`` attributes;
``Module`` discovers them by walking instance attributes, so composite
layers need no registration boilerplate.
"""

from __future__ import annotations

import math

import numpy as np

from . import tensor as F
from .tensor import ShapeError, Tensor


class ConfigError(ValueError):
    """Raised for inconsistent layer hyperparameters."""


def _uniform(rng: np.random.Generator, shape, fan_in: int, dtype) -> Tensor:
    bound = 1.0 / math.sqrt(fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape).astype(dtype), requires_grad=True)


class Module:
    training = True

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def forward(self, *args, **kwargs):  # pragma: no cover - abstract
        raise NotImplementedError

    def _children(self):
        for name, value in vars(self).items():
            if isinstance(value, (Tensor, Module)):
                yield name, value
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, (Tensor, Module)):
                        yield f"{name}.{i}", item

    def named_parameters(self, prefix: str = ""):
        for name, value in self._children():
            full = f"{prefix}{name}"
            if isinstance(value, Module):
                yield from value.named_parameters(full + ".")
            elif value.requires_grad:
                yield full, value

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix: str = ""):
        for name in getattr(self, "_buffer_names", ()):
            yield f"{prefix}{name}", getattr(self, name)
        for name, value in self._children():
            if isinstance(value, Module):
                yield from value.named_buffers(f"{prefix}{name}.")

    def state_dict(self) -> dict[str, np.ndarray]:
        state = {name: p.data for name, p in self.named_parameters()}
        state.update(dict(self.named_buffers()))
        return state

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        params = dict(self.named_parameters())
        buffers = dict(self.named_buffers())
        missing = (set(params) | set(buffers)) - set(state)
        if missing:
            raise KeyError(f"state is missing entries: {sorted(missing)[:5]}")
        for name, p in params.items():
            arr = np.asarray(state[name])
            if arr.shape != p.shape:
                raise ShapeError(f"{name}: checkpoint shape {arr.shape} != parameter shape {p.shape}")
            p.data = arr.astype(p.dtype)
        for name, buf in buffers.items():
            arr = np.asarray(state[name])
            if arr.shape != buf.shape:
                raise ShapeError(f"{name}: checkpoint shape {arr.shape} != buffer shape {buf.shape}")
            buf[...] = arr

    def train(self, mode: bool = True) -> "Module":
        self.training = mode
        for _, value in self._children():
            if isinstance(value, Module):
                value.train(mode)
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def num_parameters(self) -> int:
        return sum(p.data.size for p in self.parameters())


class Linear(Module):
    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator, dtype=np.float32, bias: bool = True):
        self.weight = _uniform(rng, (d_in, d_out), d_in, dtype)
        self.bias = _uniform(rng, (d_out,), d_in, dtype) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        y = x @ self.weight
        return y + self.bias if self.bias is not None else y


class LayerNorm(Module):
    def __init__(self, dim: int, dtype=np.float32, eps: float = 1e-5):
        self.gamma = Tensor(np.ones(dim, dtype), requires_grad=True)
        self.beta = Tensor(np.zeros(dim, dtype), requires_grad=True)
        self.eps = eps

    def forward(self, x: Tensor) -> Tensor:
        return F.layer_norm(x, self.gamma, self.beta, self.eps)


class BatchNorm(Module):
    """Batch normalization over the trailing channel axis."""

    _buffer_names = ("running_mean", "running_var")

    def __init__(self, channels: int, dtype=np.float32, momentum: float = 0.1, eps: float = 1e-5):
        self.gamma = Tensor(np.ones(channels, dtype), requires_grad=True)
        self.beta = Tensor(np.zeros(channels, dtype), requires_grad=True)
        self.running_mean = np.zeros(channels, dtype)
        self.running_var = np.ones(channels, dtype)
        self.momentum = momentum
        self.eps = eps

    def forward(self, x: Tensor) -> Tensor:
        return F.batch_norm(
            x, self.gamma, self.beta, self.running_mean, self.running_var,
            self.training, self.momentum, self.eps,
        )


class Dropout(Module):
    def __init__(self, p: float, rng: np.random.Generator):
        self.p = p
        self.rng = np.random.default_rng(rng.integers(2**63))

    def forward(self, x: Tensor) -> Tensor:
        return F.dropout(x, self.p, self.rng, self.training)


class Conv2d(Module):
    """Channels-last 2-D convolution ([B, H, W, C])."""

    def __init__(self, c_in: int, c_out: int, kernel: int, rng: np.random.Generator,
                 stride: int = 1, padding: int | None = None, dtype=np.float32):
        fan_in = c_in * kernel * kernel
        self.weight = _uniform(rng, (kernel, kernel, c_in, c_out), fan_in, dtype)
        self.bias = _uniform(rng, (c_out,), fan_in, dtype)
        self.stride = stride
        self.padding = kernel // 2 if padding is None else padding

    def forward(self, x: Tensor) -> Tensor:
        return F.conv2d(x, self.weight, self.bias, self.stride, self.padding)


class DepthwiseConv1d(Module):
    def __init__(self, dim: int, kernel: int, rng: np.random.Generator, dtype=np.float32):
        self.weight = _uniform(rng, (kernel, dim), kernel, dtype)
        self.bias = _uniform(rng, (dim,), kernel, dtype)

    def forward(self, x: Tensor) -> Tensor:
        return F.depthwise_conv1d(x, self.weight, self.bias)


class FeedForward(Module):
    """Pre-norm position-wise feed-forward: LN, expand, swish, project."""

    def __init__(self, dim: int, rng: np.random.Generator, expansion: int = 4,
                 dropout: float = 0.0, dtype=np.float32):
        self.norm = LayerNorm(dim, dtype)
        self.up = Linear(dim, expansion * dim, rng, dtype)
        self.down = Linear(expansion * dim, dim, rng, dtype)
        self.drop = Dropout(dropout, rng)

    def forward(self, x: Tensor) -> Tensor:
        h = F.swish(self.up(self.norm(x)))
        return self.drop(self.down(self.drop(h)))


class MultiHeadAttention(Module):
    """Scaled dot-product attention over [B, T, D] sequences.

    Called with one sequence it is self-attention; with two, queries come
    from the first and keys/values from the second. The most recent
    attention weights ([B, H, T_q, T_kv]) are kept on ``last_weights``.
    """

    def __init__(self, dim: int, heads: int, rng: np.random.Generator, dtype=np.float32):
        if dim % heads:
            raise ConfigError(f"attention width {dim} is not divisible by {heads} heads")
        self.heads = heads
        self.dim = dim
        self.q = Linear(dim, dim, rng, dtype)
        self.k = Linear(dim, dim, rng, dtype)
        self.v = Linear(dim, dim, rng, dtype)
        self.out = Linear(dim, dim, rng, dtype)
        self.last_weights: np.ndarray | None = None

    def _split(self, x: Tensor) -> Tensor:
        b, t, _ = x.shape
        return x.reshape(b, t, self.heads, self.dim // self.heads).transpose(0, 2, 1, 3)

    def forward(self, query: Tensor, key_value: Tensor | None = None) -> Tensor:
        kv = query if key_value is None else key_value
        if query.ndim != 3 or kv.ndim != 3:
            raise ShapeError(f"attention expects [B, T, D], got {query.shape} and {kv.shape}")
        if kv.shape[0] != query.shape[0] or kv.shape[2] != query.shape[2]:
            raise ShapeError(f"attention: query {query.shape} and key/value {kv.shape} disagree")
        if key_value is not None and kv.shape[1] != query.shape[1]:
            raise ShapeError(f"cross-attention: sequence lengths differ ({query.shape[1]} vs {kv.shape[1]})")
        q, k, v = self._split(self.q(query)), self._split(self.k(kv)), self._split(self.v(kv))
        scores = (q @ k.transpose(0, 1, 3, 2)) * (1.0 / math.sqrt(self.dim // self.heads))
        weights = F.softmax(scores, axis=-1)
        self.last_weights = weights.data
        ctx = (weights @ v).transpose(0, 2, 1, 3)
        b, t = ctx.shape[:2]
        return self.out(ctx.reshape(b, t, self.dim))


class ConvModule(Module):
    """Conformer convolution sub-block: LN, pointwise, GLU, depthwise, BN, swish, pointwise."""

    def __init__(self, dim: int, kernel: int, rng: np.random.Generator, dropout: float = 0.0, dtype=np.float32):
        self.norm = LayerNorm(dim, dtype)
        self.pw_in = Linear(dim, 2 * dim, rng, dtype)
        self.depthwise = DepthwiseConv1d(dim, kernel, rng, dtype)
        self.bn = BatchNorm(dim, dtype)
        self.pw_out = Linear(dim, dim, rng, dtype)
        self.drop = Dropout(dropout, rng)

    def forward(self, x: Tensor) -> Tensor:
        h = F.glu(self.pw_in(self.norm(x)), axis=-1)
        h = F.swish(self.bn(self.depthwise(h)))
        return self.drop(self.pw_out(h))


class ConformerBlock(Module):
    """Macaron block: half FF, MHSA, convolution, half FF, final LN; residual around each."""

    def __init__(self, dim: int, heads: int, kernel: int, rng: np.random.Generator,
                 dropout: float = 0.0, dtype=np.float32):
        self.ff1 = FeedForward(dim, rng, dropout=dropout, dtype=dtype)
        self.attn_norm = LayerNorm(dim, dtype)
        self.attn = MultiHeadAttention(dim, heads, rng, dtype)
        self.attn_drop = Dropout(dropout, rng)
        self.conv = ConvModule(dim, kernel, rng, dropout, dtype)
        self.ff2 = FeedForward(dim, rng, dropout=dropout, dtype=dtype)
        self.norm = LayerNorm(dim, dtype)

    def forward(self, x: Tensor) -> Tensor:
        x = x + 0.5 * self.ff1(x)
        x = x + self.attn_drop(self.attn(self.attn_norm(x)))
        x = x + self.conv(x)
        x = x + 0.5 * self.ff2(x)
        return self.norm(x)


class Conformer(Module):
    """Stack of Conformer blocks with a sinusoidal table added at the input."""

    def __init__(self, dim: int, rng: np.random.Generator, layers: int = 4, heads: int = 8,
                 kernel: int = 51, dropout: float = 0.05, dtype=np.float32):
        self.blocks = [ConformerBlock(dim, heads, kernel, rng, dropout, dtype) for _ in range(layers)]

    def forward(self, x: Tensor) -> Tensor:
        if x.shape[-2] < 1:
            raise ShapeError("conformer: sequence must have at least one step")
        x = F.add_positional_encoding(x)
        for block in self.blocks:
            x = block(x)
        return x


class GRU(Module):
    """Single-direction GRU over [B, T, D_in], returning all hidden states [B, T, H]."""

    def __init__(self, d_in: int, hidden: int, rng: np.random.Generator, dtype=np.float32):
        self.hidden = hidden
        self.w_in = _uniform(rng, (d_in, 3 * hidden), hidden, dtype)
        self.b_in = _uniform(rng, (3 * hidden,), hidden, dtype)
        self.w_h = _uniform(rng, (hidden, 3 * hidden), hidden, dtype)
        self.b_h = _uniform(rng, (3 * hidden,), hidden, dtype)

    def forward(self, x: Tensor, reverse: bool = False) -> Tensor:
        b, t, _ = x.shape
        hsz = self.hidden
        gates_x = x @ self.w_in + self.b_in
        h = Tensor(np.zeros((b, hsz), x.dtype))
        steps = range(t - 1, -1, -1) if reverse else range(t)
        outputs: list[Tensor | None] = [None] * t
        for s in steps:
            gx = gates_x[:, s, :]
            gh = h @ self.w_h + self.b_h
            r = F.sigmoid(gx[:, :hsz] + gh[:, :hsz])
            z = F.sigmoid(gx[:, hsz:2 * hsz] + gh[:, hsz:2 * hsz])
            n = F.tanh(gx[:, 2 * hsz:] + r * gh[:, 2 * hsz:])
            h = (1.0 - z) * n + z * h
            outputs[s] = h
        return F.stack(outputs, axis=1)


class BiGRU(Module):
    """Stacked bidirectional GRU; each direction has ``d_out // 2`` units."""

    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator, layers: int = 2, dtype=np.float32):
        if d_out % 2:
            raise ConfigError(f"bidirectional GRU output width {d_out} must be even")
        self.fwd = []
        self.bwd = []
        width = d_in
        for _ in range(layers):
            self.fwd.append(GRU(width, d_out // 2, rng, dtype))
            self.bwd.append(GRU(width, d_out // 2, rng, dtype))
            width = d_out

    def forward(self, x: Tensor) -> Tensor:
        for fwd, bwd in zip(self.fwd, self.bwd):
            x = F.concat([fwd(x), bwd(x, reverse=True)], axis=-1)
        return x
