import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gradcases import FUSION_CASES, LAYER_CASES, OP_CASES, TOL, worst_error
from seldkit.autodiff import (
    Adam, AdamState, BiGRU, Conformer, MultiHeadAttention, OptimizerError, ShapeError, Tensor, adam_step,
    load_checkpoint, lr_schedule, no_grad, save_checkpoint,
)
from seldkit.autodiff import ops as F
from seldkit.autodiff.nn import ConfigError, Linear

UNIT_SEEDS = (0, 1, 2)  # the acceptance run covers ten seeds


@pytest.mark.parametrize("seed", UNIT_SEEDS)
@pytest.mark.parametrize("name", sorted(OP_CASES))
def test_op_gradients(name, seed):
    assert worst_error(OP_CASES[name], seed) < TOL


@pytest.mark.parametrize("seed", UNIT_SEEDS)
@pytest.mark.parametrize("name", sorted(LAYER_CASES))
def test_layer_gradients(name, seed):
    assert worst_error(LAYER_CASES[name], seed) < TOL


@pytest.mark.parametrize("name", sorted(FUSION_CASES))
def test_fusion_gradients(name):
    assert worst_error(FUSION_CASES[name], 0) < TOL


def test_square_derivative():
    x = Tensor(np.array(3.0), requires_grad=True)
    (x * x).backward()
    assert float(x.grad) == 6.0


def test_gradients_accumulate_over_reuse():
    x = Tensor(np.array([1.0, 2.0]), requires_grad=True)
    y = (x * 2.0 + x * x).sum()
    y.backward()
    assert np.array_equal(x.grad, 2.0 + 2 * x.data)


def test_no_grad_builds_no_graph():
    x = Tensor(np.ones(3), requires_grad=True)
    with no_grad():
        y = (x * 2).sum()
    assert not y.requires_grad


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000))
def test_softmax_rows_sum_to_one(seed):
    x = Tensor(np.random.default_rng(seed).normal(0, 30, (4, 7)))
    assert np.all(np.abs(F.softmax(x).data.sum(-1) - 1) < 1e-12)


def test_attention_single_step_weight_is_one():
    rng = np.random.default_rng(0)
    mha = MultiHeadAttention(8, 2, rng, np.float64)
    mha(Tensor(rng.standard_normal((2, 1, 8))))
    assert np.all(mha.last_weights == 1.0)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000))
def test_attention_rows_sum_to_one(seed):
    rng = np.random.default_rng(seed)
    mha = MultiHeadAttention(8, 4, rng, np.float64)
    mha(Tensor(rng.standard_normal((2, 5, 8))))
    assert np.allclose(mha.last_weights.sum(-1), 1.0, atol=1e-12)


def test_self_attention_is_permutation_equivariant():
    rng = np.random.default_rng(1)
    mha = MultiHeadAttention(8, 2, rng, np.float64)
    x = rng.standard_normal((1, 6, 8))
    perm = rng.permutation(6)
    a = mha(Tensor(x)).data[:, perm]
    b = mha(Tensor(x[:, perm])).data
    assert np.allclose(a, b, atol=1e-12)


def test_attention_matches_reference_formula():
    rng = np.random.default_rng(2)
    mha = MultiHeadAttention(4, 1, rng, np.float64)
    x = rng.standard_normal((1, 3, 4))
    q = x[0] @ mha.q.weight.data + mha.q.bias.data
    k = x[0] @ mha.k.weight.data + mha.k.bias.data
    v = x[0] @ mha.v.weight.data + mha.v.bias.data
    s = q @ k.T / 2.0
    w = np.exp(s - s.max(1, keepdims=True))
    w /= w.sum(1, keepdims=True)
    expected = (w @ v) @ mha.out.weight.data + mha.out.bias.data
    assert np.allclose(mha(Tensor(x)).data[0], expected, atol=1e-12)


def test_cross_attention_constant_memory_gives_constant_output():
    rng = np.random.default_rng(3)
    mha = MultiHeadAttention(8, 2, rng, np.float64)
    kv = np.repeat(rng.standard_normal((1, 1, 8)), 5, axis=1)
    out = mha(Tensor(rng.standard_normal((1, 5, 8))), Tensor(kv)).data
    assert np.allclose(out, out[:, :1], atol=1e-12)


def test_cross_attention_on_itself_equals_self_attention():
    rng = np.random.default_rng(4)
    mha = MultiHeadAttention(8, 2, rng, np.float64)
    x = Tensor(rng.standard_normal((2, 4, 8)))
    assert np.array_equal(mha(x, x).data, mha(x).data)


def test_attention_shape_checks():
    rng = np.random.default_rng(5)
    mha = MultiHeadAttention(8, 2, rng, np.float64)
    with pytest.raises(ShapeError):
        mha(Tensor(np.zeros((2, 4, 8))), Tensor(np.zeros((2, 3, 8))))
    with pytest.raises(ShapeError):
        mha(Tensor(np.zeros((4, 8))))
    with pytest.raises(ConfigError):
        MultiHeadAttention(10, 4, rng)


def test_conformer_preserves_shape():
    rng = np.random.default_rng(6)
    net = Conformer(16, rng, layers=2, heads=4, kernel=51, dropout=0.0, dtype=np.float64)
    assert net(Tensor(rng.standard_normal((2, 7, 16)))).shape == (2, 7, 16)


def test_bigru_reversal_symmetry():
    # swapping the direction weights and reversing time mirrors the output halves
    rng = np.random.default_rng(7)
    net = BiGRU(3, 8, rng, layers=1, dtype=np.float64)
    x = rng.standard_normal((1, 6, 3))
    out = net(Tensor(x)).data
    net.fwd, net.bwd = net.bwd, net.fwd
    rev = net(Tensor(x[:, ::-1].copy())).data[:, ::-1]
    assert np.allclose(out[..., :4], rev[..., 4:], atol=1e-12)
    assert np.allclose(out[..., 4:], rev[..., :4], atol=1e-12)


def test_bigru_odd_width_rejected():
    with pytest.raises(ConfigError):
        BiGRU(3, 5, np.random.default_rng(0))


def test_shape_error_on_mismatched_matmul():
    with pytest.raises(ShapeError):
        Tensor(np.zeros((2, 3))) @ Tensor(np.zeros((4, 2)))


# -- optimizer ---------------------------------------------------------------

def test_adam_zero_gradient_leaves_parameters_unchanged():
    p = {"w": np.array([1.0, -2.0])}
    state = AdamState(lr=1e-3)
    adam_step(p, {"w": np.zeros(2)}, state)
    adam_step(p, {"w": None}, state)
    assert np.array_equal(p["w"], [1.0, -2.0])
    assert state.step == 2


def test_adam_first_step_matches_hand_formula():
    g = np.array([0.5, -3.0, 1e-4])
    p = {"w": np.zeros(3)}
    adam_step(p, {"w": g}, AdamState(lr=0.01))
    # after bias correction m_hat = g and v_hat = g^2
    assert np.allclose(p["w"], -0.01 * g / (np.abs(g) + 1e-8), atol=1e-15)


def test_adam_two_step_scalar_trajectory():
    p = {"w": np.array([1.0])}
    state = AdamState(lr=0.1, beta1=0.9, beta2=0.999, eps=1e-8)
    adam_step(p, {"w": np.array([2.0])}, state)
    adam_step(p, {"w": np.array([-1.0])}, state)
    m = 0.9 * (0.1 * 2.0) + 0.1 * -1.0
    v = 0.999 * (0.001 * 4.0) + 0.001 * 1.0
    m_hat, v_hat = m / (1 - 0.9**2), v / (1 - 0.999**2)
    expected = 1.0 - 0.1 * 2.0 / (2.0 + 1e-8) - 0.1 * m_hat / (np.sqrt(v_hat) + 1e-8)
    assert p["w"][0] == pytest.approx(expected, abs=1e-14)


def test_adam_rejects_non_finite_gradient():
    p = {"w": np.ones(2)}
    state = AdamState()
    with pytest.raises(OptimizerError, match="'w'"):
        adam_step(p, {"w": np.array([1.0, np.nan])}, state)
    assert np.array_equal(p["w"], [1.0, 1.0]) and state.step == 0


def test_adam_minimizes_quadratic():
    x = Tensor(np.array([3.0, -2.0]), requires_grad=True)
    opt = Adam([("x", x)], lr=0.1)
    for _ in range(300):
        opt.zero_grad()
        ((x - Tensor(np.array([1.0, 1.0]))) ** 2).sum().backward()
        opt.step()
    assert np.allclose(x.data, [1.0, 1.0], atol=1e-2)


@pytest.mark.parametrize("epoch,factor", [(0, 1.0), (29, 1.0), (30, 0.95), (31, 0.9025), (40, 0.95**11)])
def test_lr_schedule(epoch, factor):
    assert lr_schedule(epoch, 1e-3) == pytest.approx(1e-3 * factor, rel=1e-12)


# -- checkpoints -------------------------------------------------------------

def test_checkpoint_roundtrip(tmp_path):
    rng = np.random.default_rng(8)
    net = Conformer(8, rng, layers=1, heads=2, kernel=5)
    path = save_checkpoint(tmp_path / "c.bin", net.state_dict(), {"note": "x"})
    state = load_checkpoint(path, {k: v.shape for k, v in net.state_dict().items()})
    other = Conformer(8, np.random.default_rng(9), layers=1, heads=2, kernel=5)
    other.load_state_dict(state)
    x = Tensor(rng.standard_normal((1, 4, 8)).astype(np.float32))
    net.eval(), other.eval()
    assert np.array_equal(net(x).data, other(x).data)
    assert (tmp_path / "c.bin.json").exists()


def test_checkpoint_shape_validation(tmp_path):
    path = save_checkpoint(tmp_path / "c.bin", {"w": np.zeros((2, 3))})
    with pytest.raises(ShapeError):
        load_checkpoint(path, {"w": (3, 2)})
    with pytest.raises(KeyError):
        load_checkpoint(path, {"b": (3,)})
    lin = Linear(3, 3, np.random.default_rng(0))
    with pytest.raises(ShapeError):
        lin.load_state_dict({"weight": np.zeros((2, 3)), "bias": np.zeros(3)})


def test_same_seed_same_parameters():
    a = Conformer(8, np.random.default_rng(11), layers=1, heads=2, kernel=5).state_dict()
    b = Conformer(8, np.random.default_rng(11), layers=1, heads=2, kernel=5).state_dict()
    assert a.keys() == b.keys() and all(np.array_equal(a[k], b[k]) for k in a)
