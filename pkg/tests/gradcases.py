"""Finite-difference gradient cases shared by the autodiff tests and the acceptance run.

Each case builds, for one seed, a scalar-valued closure plus the tensors to
differentiate. Outputs are contracted with a fixed random tensor so that
constant-sum outputs (softmax, layer norm) still have informative gradients.
"""

from __future__ import annotations

import numpy as np

from seldkit.autodiff import ops as F
from seldkit.autodiff.gradcheck import check_gradients
from seldkit.autodiff.nn import (
    BatchNorm, BiGRU, Conformer, ConformerBlock, Conv2d, ConvModule, DepthwiseConv1d, FeedForward, GRU,
    LayerNorm, Linear, MultiHeadAttention,
)
from seldkit.autodiff.tensor import Tensor
from seldkit.model import (
    AccdoaHead, AudioEncoder, CmafBlock, CmafFusion, ConformerFusion, GruFusion, ModelConfig, ResidualConvBlock,
    VisualEmbedder,
)

TOL = 1e-4
F64 = np.float64


def _leaf(rng, *shape, low=-1.0, high=1.0):
    return Tensor(rng.uniform(low, high, shape), requires_grad=True)


def _away_from_zero(rng, *shape):
    x = rng.uniform(0.1, 1.0, shape) * rng.choice([-1.0, 1.0], shape)
    return Tensor(x, requires_grad=True)


def _contract(out: Tensor, rng):
    r = rng.standard_normal(out.shape)
    return lambda y: (y * Tensor(r)).sum()


def _case(build, inputs_fn):
    """Wrap ``build(*inputs) -> Tensor`` with a fixed random contraction."""
    def make(seed):
        rng = np.random.default_rng(seed)
        inputs = inputs_fn(rng)
        probe = build(*inputs)
        contract = _contract(probe, rng)
        return (lambda: contract(build(*inputs))), list(inputs)
    return make


def _module_case(ctor, input_shapes, call=None, seed_offset=0):
    """Gradient w.r.t. module inputs and every parameter."""
    def make(seed):
        rng = np.random.default_rng(seed + seed_offset)
        module = ctor(rng)
        inputs = [_leaf(rng, *s) for s in input_shapes]
        fwd = call or (lambda m, *xs: m(*xs))
        probe = fwd(module, *inputs)
        contract = _contract(probe, rng)
        return (lambda: contract(fwd(module, *inputs))), inputs + module.parameters()
    return make


def _dropout_case(seed):
    rng = np.random.default_rng(seed)
    x = _leaf(rng, 4, 5)

    def fn():
        # same mask on every call: fresh generator with a fixed seed
        return (F.dropout(x, 0.3, np.random.default_rng(seed), True) * Tensor(np.arange(20.0).reshape(4, 5))).sum()
    return fn, [x]


OP_CASES = {
    "add_broadcast": _case(lambda a, b: a + b, lambda r: (_leaf(r, 3, 4), _leaf(r, 4))),
    "sub": _case(lambda a, b: a - b, lambda r: (_leaf(r, 2, 3), _leaf(r, 2, 1))),
    "mul_broadcast": _case(lambda a, b: a * b, lambda r: (_leaf(r, 3, 4), _leaf(r, 3, 1))),
    "div": _case(lambda a, b: a / b, lambda r: (_leaf(r, 3, 4), _away_from_zero(r, 4))),
    "power": _case(lambda a: a ** 3, lambda r: (_leaf(r, 5),)),
    "exp": _case(F.exp, lambda r: (_leaf(r, 2, 3),)),
    "log": _case(F.log, lambda r: (_leaf(r, 2, 3, low=0.2, high=2.0),)),
    "matmul_batched": _case(lambda a, b: a @ b, lambda r: (_leaf(r, 2, 3, 4), _leaf(r, 4, 5))),
    "reshape": _case(lambda a: a.reshape(6, 2) * a.reshape(6, 2), lambda r: (_leaf(r, 3, 4),)),
    "transpose": _case(lambda a: a.transpose(2, 0, 1), lambda r: (_leaf(r, 2, 3, 4),)),
    "concat": _case(lambda a, b: F.concat([a, b, a], axis=1), lambda r: (_leaf(r, 2, 3), _leaf(r, 2, 2))),
    "stack": _case(lambda a, b: F.stack([a, b], axis=1), lambda r: (_leaf(r, 2, 3), _leaf(r, 2, 3))),
    "slice": _case(lambda a: a[:, 1:3] * a[:, 0:2], lambda r: (_leaf(r, 3, 4),)),
    "sum_axis": _case(lambda a: a.sum(axis=1) ** 2, lambda r: (_leaf(r, 3, 4),)),
    "mean_axes": _case(lambda a: a.mean(axis=(0, 2), keepdims=True) * a, lambda r: (_leaf(r, 2, 3, 4),)),
    "relu": _case(F.relu, lambda r: (_away_from_zero(r, 3, 4),)),
    "sigmoid": _case(F.sigmoid, lambda r: (_leaf(r, 3, 4, low=-4, high=4),)),
    "tanh": _case(F.tanh, lambda r: (_leaf(r, 3, 4),)),
    "swish": _case(F.swish, lambda r: (_leaf(r, 3, 4),)),
    "glu": _case(lambda a: F.glu(a, axis=-1), lambda r: (_leaf(r, 3, 6),)),
    "softmax": _case(lambda a: F.softmax(a, axis=-1), lambda r: (_leaf(r, 3, 5),)),
    "dropout": _dropout_case,
    "layer_norm": _case(lambda x, g, b: F.layer_norm(x, g, b), lambda r: (_leaf(r, 3, 6), _leaf(r, 6), _leaf(r, 6))),
    "batch_norm": _case(
        lambda x, g, b: F.batch_norm(x, g, b, np.zeros(4), np.ones(4), training=True),
        lambda r: (_leaf(r, 2, 3, 4), _leaf(r, 4), _leaf(r, 4)),
    ),
    "conv2d_3x3": _case(lambda x, w, b: F.conv2d(x, w, b), lambda r: (_leaf(r, 2, 5, 6, 3), _leaf(r, 3, 3, 3, 4), _leaf(r, 4))),
    "conv2d_stride2": _case(
        lambda x, w, b: F.conv2d(x, w, b, stride=2, padding=1),
        lambda r: (_leaf(r, 1, 6, 7, 2), _leaf(r, 3, 3, 2, 3), _leaf(r, 3)),
    ),
    "conv2d_1x1": _case(lambda x, w: F.conv2d(x, w, None, padding=0), lambda r: (_leaf(r, 2, 3, 4, 3), _leaf(r, 1, 1, 3, 2))),
    "avg_pool2d": _case(lambda x: F.avg_pool2d(x, 2), lambda r: (_leaf(r, 2, 4, 6, 3),)),
    "depthwise_conv1d": _case(lambda x, w, b: F.depthwise_conv1d(x, w, b), lambda r: (_leaf(r, 2, 7, 3), _leaf(r, 5, 3), _leaf(r, 3))),
    "depthwise_conv1d_k51": _case(lambda x, w: F.depthwise_conv1d(x, w), lambda r: (_leaf(r, 1, 30, 2), _leaf(r, 51, 2))),
    "positional_encoding": _case(lambda x: F.add_positional_encoding(x) * x, lambda r: (_leaf(r, 2, 5, 4),)),
}


def _tiny_cfg(**kw) -> ModelConfig:
    base = dict(embed_dim=16, heads=2, fusion_layers=1, encoder_layers=1, kernel=5, dropout=0.0,
                cnn_channels=(4, 16), mel_bins=8, frame_size=(32, 16), patch=8, visual_channels=(4,),
                dtype="float64")
    base.update(kw)
    return ModelConfig(**base)


def _visual_case(encoder):
    def make(seed):
        rng = np.random.default_rng(seed)
        cfg = _tiny_cfg(visual_encoder=encoder)
        module = VisualEmbedder(cfg, rng)
        frames = rng.uniform(0, 1, (2, 3, 16, 32, 3))
        probe = module(frames)
        contract = _contract(probe, rng)
        return (lambda: contract(module(frames))), module.parameters()
    return make


LAYER_CASES = {
    "linear": _module_case(lambda r: Linear(4, 3, r, F64), [(2, 5, 4)]),
    "layer_norm": _module_case(lambda r: LayerNorm(6, F64), [(2, 3, 6)]),
    "batch_norm": _module_case(lambda r: BatchNorm(3, F64), [(4, 5, 3)]),
    "conv2d": _module_case(lambda r: Conv2d(2, 3, 3, r, dtype=F64), [(2, 4, 5, 2)]),
    "depthwise_conv1d": _module_case(lambda r: DepthwiseConv1d(4, 51, r, F64), [(1, 12, 4)]),
    "feed_forward": _module_case(lambda r: FeedForward(8, r, dropout=0.0, dtype=F64), [(2, 3, 8)]),
    "mhsa": _module_case(lambda r: MultiHeadAttention(8, 2, r, F64), [(2, 4, 8)]),
    "mhca": _module_case(lambda r: MultiHeadAttention(8, 2, r, F64), [(2, 4, 8), (2, 4, 8)]),
    "conv_module": _module_case(lambda r: ConvModule(8, 5, r, 0.0, F64), [(2, 6, 8)]),
    "conformer_block": _module_case(lambda r: ConformerBlock(8, 2, 5, r, 0.0, F64), [(2, 5, 8)]),
    "conformer": _module_case(lambda r: Conformer(8, r, layers=2, heads=2, kernel=51, dropout=0.0, dtype=F64), [(1, 6, 8)]),
    "gru": _module_case(lambda r: GRU(4, 3, r, F64), [(2, 5, 4)]),
    "bigru": _module_case(lambda r: BiGRU(4, 6, r, layers=2, dtype=F64), [(2, 4, 4)]),
    "residual_conv_block": _module_case(lambda r: ResidualConvBlock(3, 4, r, F64), [(2, 4, 6, 3)]),
    "audio_encoder": _module_case(lambda r: AudioEncoder(_tiny_cfg(), r), [(2, 7, 8, 8)]),
    "visual_patch_projection": _visual_case("patch_projection"),
    "visual_split_pool_cnn": _visual_case("split_pool_cnn"),
    "accdoa_head": _module_case(lambda r: AccdoaHead(8, 6, 3, 2, r, F64), [(2, 3, 8)]),
}

FUSION_CASES = {
    "cmaf_block": _module_case(lambda r: CmafBlock(8, 2, r, F64, self_attention=True), [(2, 4, 8), (2, 4, 8)]),
    "ca_block": _module_case(lambda r: CmafBlock(8, 2, r, F64, self_attention=False), [(2, 4, 8), (2, 4, 8)]),
    "cmaf": _module_case(lambda r: CmafFusion(_tiny_cfg(fusion_layers=2), r, True), [(2, 4, 16), (2, 4, 16)]),
    "ca": _module_case(lambda r: CmafFusion(_tiny_cfg(fusion_layers=2), r, False), [(2, 4, 16), (2, 4, 16)]),
    "av_conformer": _module_case(lambda r: ConformerFusion(_tiny_cfg(), r), [(1, 4, 16), (1, 4, 16)]),
    "gru_fusion": _module_case(lambda r: GruFusion(_tiny_cfg(embed_dim=4, heads=1, cnn_channels=(4,)), r), [(1, 3, 4), (1, 3, 4)]),
}

ALL_CASES = {**{f"op:{k}": v for k, v in OP_CASES.items()},
             **{f"layer:{k}": v for k, v in LAYER_CASES.items()},
             **{f"fusion:{k}": v for k, v in FUSION_CASES.items()}}


def worst_error(make, seed: int, max_entries: int = 8) -> float:
    fn, inputs = make(seed)
    return check_gradients(fn, inputs, h=1e-5, max_entries=max_entries, rng=np.random.default_rng(seed))
