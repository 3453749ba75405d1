import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from cuetraj.errors import ConfigError, ContractError, DimensionError
from cuetraj.nn import (
    AdamState, EncoderLayerParams, Tensor, adam_step, backward, clip_grad_norm, concat, encoder_forward,
    getitem, key_padding_bias, layer_norm, linear, matmul, mse, multi_head_attention,
    no_grad, parameter, relu, reshape, softmax, take, topological_order, transpose, tsum,
    zero_grad,
)
from cuetraj.nn.checkpoint import load_tensors, save_tensors
from cuetraj.nn.layers import MLPParams

from helpers import check_grads

RNG = np.random.default_rng(0)


def P(shape, scale=1.0, seed=None):
    rng = RNG if seed is None else np.random.default_rng(seed)
    return parameter(rng.normal(0, scale, size=shape))


# --- linear -----------------------------------------------------------------

def test_linear_identity():
    out = linear(Tensor([1.0, 2.0]), Tensor(np.eye(2)), Tensor(np.zeros(2)))
    np.testing.assert_array_equal(out.data, [1.0, 2.0])


def test_linear_zero_weights_gives_bias():
    for x in ([0.0, 0.0], [5.0, -3.0]):
        out = linear(Tensor(x), Tensor(np.zeros((2, 1))), Tensor([3.0]))
        np.testing.assert_array_equal(out.data, [3.0])


def test_linear_column_sums():
    w = np.random.default_rng(3).normal(size=(3, 2))
    b = np.array([0.5, -1.0])
    out = linear(Tensor(np.ones(3)), Tensor(w), Tensor(b))
    expected = [w[0, 0] + w[1, 0] + w[2, 0] + b[0], w[0, 1] + w[1, 1] + w[2, 1] + b[1]]
    np.testing.assert_allclose(out.data, expected, rtol=0, atol=1e-14)


def test_linear_shape_error_names_both_shapes():
    with pytest.raises(DimensionError, match=r"\(4,\).*\(3, 2\)"):
        linear(Tensor(np.ones(4)), Tensor(np.ones((3, 2))))


# --- attention ----------------------------------------------------------------

def _layer(d, seed=0, scale=0.02):
    p = EncoderLayerParams.init(np.random.default_rng(seed), d)
    if scale != 0.02:
        for t in p.named("x").values():
            if t.ndim == 2:
                t.data[...] = np.random.default_rng(seed + 1).normal(0, scale, t.shape)
    return p


def test_attention_single_token_weight_is_one():
    p = _layer(8)
    x = Tensor(RNG.normal(size=(1, 8)))
    _, w = multi_head_attention(x, x, x, p, heads=2, capture=True)
    np.testing.assert_array_equal(w, np.ones((2, 1, 1)))


def test_attention_identical_keys_uniform():
    p = _layer(8, scale=0.5)
    x = Tensor(np.tile(RNG.normal(size=(1, 8)), (5, 1)))
    _, w = multi_head_attention(x, x, x, p, heads=4, capture=True)
    np.testing.assert_allclose(w, np.full((4, 5, 5), 0.2), atol=1e-15)


def test_attention_hand_evaluated_two_tokens():
    p = _layer(2)
    for name in ("wq", "wk", "wv", "wo"):
        getattr(p, name).data[...] = np.eye(2)
    p.wq.data[...] = [[1.0, 0.0], [0.0, 2.0]]
    x = np.array([[1.0, 0.0], [0.5, 1.0]])
    _, w = multi_head_attention(Tensor(x), Tensor(x), Tensor(x), p, heads=1, capture=True)
    q = x @ np.array([[1.0, 0.0], [0.0, 2.0]])
    scores = q @ x.T / np.sqrt(2)
    hand = np.exp(scores) / np.exp(scores).sum(axis=1, keepdims=True)
    np.testing.assert_allclose(w[0], hand, rtol=0, atol=1e-15)


def test_attention_heads_must_divide_width():
    p = _layer(6)
    x = Tensor(np.ones((2, 6)))
    with pytest.raises(ConfigError):
        multi_head_attention(x, x, x, p, heads=4)


@settings(max_examples=25, deadline=None)
@given(arrays(np.float64, (2, 7, 8), elements=st.floats(-10, 10)),
       st.lists(st.booleans(), min_size=7, max_size=7))
def test_attention_rows_sum_to_one(x, valid):
    valid = np.array(valid)
    valid[0] = True
    p = _layer(8, scale=0.3)
    bias = key_padding_bias(np.stack([valid, valid]))
    _, w = multi_head_attention(Tensor(x), Tensor(x), Tensor(x), p, 2, bias, capture=True)
    np.testing.assert_allclose(w.sum(axis=-1), 1.0, atol=1e-9)
    assert np.all(w[..., ~valid] == 0.0)


# --- encoder --------------------------------------------------------------------

def _zeroed_layer(d):
    p = _layer(d)
    for name, t in p.named("x").items():
        if not name.endswith("_g"):
            t.data[...] = 0.0
    return p


def test_encoder_zero_sublayers_normalises_input():
    x = RNG.normal(size=(5, 8))
    out, _ = encoder_forward(Tensor(x), [_zeroed_layer(8), _zeroed_layer(8)], heads=2)
    xhat = (x - x.mean(-1, keepdims=True)) / np.sqrt(x.var(-1, keepdims=True) + 1e-5)
    xhat = (xhat - xhat.mean(-1, keepdims=True)) / np.sqrt(xhat.var(-1, keepdims=True) + 1e-5)
    np.testing.assert_allclose(out.data, xhat, atol=1e-12)


def test_encoder_single_token_is_mlp_stack():
    p = _layer(8, seed=4, scale=0.3)
    x = RNG.normal(size=(1, 8))
    out, _ = encoder_forward(Tensor(x), [p], heads=2)
    # one token attends only to itself, so attention reduces to the value/output maps
    att = (x @ p.wv.data + p.bv.data) @ p.wo.data + p.bo.data
    h = layer_norm(Tensor(x + att), p.ln1_g, p.ln1_b).data
    ff = np.maximum(h @ p.ff_w1.data + p.ff_b1.data, 0) @ p.ff_w2.data + p.ff_b2.data
    y = layer_norm(Tensor(h + ff), p.ln2_g, p.ln2_b).data
    np.testing.assert_allclose(out.data, y, atol=1e-12)


def test_encoder_fuzz_finite_and_bounded():
    layers = [_layer(16, seed=s, scale=0.3) for s in range(2)]
    rng = np.random.default_rng(11)
    for _ in range(100):
        x = rng.normal(0, rng.uniform(0.1, 100), size=(rng.integers(1, 12), 16))
        out, _ = encoder_forward(Tensor(x), layers, heads=4)
        assert np.all(np.isfinite(out.data))
        # post-norm output: every token has (almost) unit RMS
        assert np.all(np.linalg.norm(out.data, axis=-1) <= np.sqrt(16) + 1e-6)


def test_encoder_deterministic():
    layers = [_layer(8, seed=2, scale=0.3)]
    x = RNG.normal(size=(2, 4, 8))
    a, _ = encoder_forward(Tensor(x), layers, heads=2)
    b, _ = encoder_forward(Tensor(x), layers, heads=2)
    assert np.array_equal(a.data, b.data)


# --- backward -------------------------------------------------------------------

def test_backward_sum_gives_ones():
    w = P((3, 4))
    backward(tsum(w))
    np.testing.assert_array_equal(w.grad, np.ones((3, 4)))


def test_backward_linear_regression_at_zero():
    rng = np.random.default_rng(5)
    x, y = rng.normal(size=(10, 3)), rng.normal(size=(10, 1))
    w = parameter(np.zeros((3, 1)))
    backward(mse(matmul(Tensor(x), w), y))
    np.testing.assert_allclose(w.grad, -2 * (x * y).mean(axis=0)[:, None], atol=1e-14)


def test_backward_requires_scalar():
    w = P((2,))
    with pytest.raises(ContractError):
        backward(w * 2.0)


def test_backward_disconnected_loss():
    with pytest.raises(ContractError):
        backward(tsum(Tensor(np.ones(3))))


def test_no_grad_records_nothing():
    w = P((2, 2))
    with no_grad():
        out = matmul(w, w)
    assert out._parents == () and not out.requires_grad


def test_topological_order_visits_each_node_once():
    w = P((3,))
    a = w * 2.0
    b = a + w
    c = b * a
    order = topological_order(tsum(c))
    assert len(order) == len({id(n) for n in order})
    pos = {id(n): i for i, n in enumerate(order)}
    for n in order:
        for parent in n._parents:
            if parent.requires_grad:
                assert pos[id(parent)] < pos[id(n)]


PRIMITIVES = {
    "add": lambda a, b: a + b,
    "sub": lambda a, b: a - b,
    "mul": lambda a, b: a * b,
    "matmul": lambda a, b: matmul(a, transpose(b, (1, 0))),
    "relu": lambda a, b: relu(a) * b,
    "softmax": lambda a, b: softmax(a, scale=0.7) * b,
    "softmax_masked": lambda a, b: softmax(
        a, np.where(np.arange(4) == 2, -np.inf, 0.0)) * b,
    "reshape_transpose": lambda a, b: reshape(transpose(a, (1, 0)), (4, 3)) * reshape(b, (4, 3)),
    "concat": lambda a, b: concat([a, b], axis=0) * 1.5,
    "getitem": lambda a, b: getitem(a, (slice(1, 3), [0, 2])) * getitem(b, (0, slice(0, 2))),
    "take": lambda a, b: take(a, np.array([[0, 2], [2, 1]])) * getitem(b, (slice(0, 2),)),
}


@pytest.mark.parametrize("name", sorted(PRIMITIVES))
def test_primitive_gradients(name):
    a, b = P((3, 4), seed=1), P((3, 4), seed=2)
    w = np.random.default_rng(9)
    fn = PRIMITIVES[name]

    def loss():
        out = fn(a, b)
        return tsum(out * Tensor(np.linspace(-1, 1, out.data.size).reshape(out.shape)))

    errs = check_grads(loss, {"a": a, "b": b})
    assert max(errs.values()) < 1e-7, errs
    del w


def test_layer_norm_and_linear_gradients():
    x, g, bta = P((2, 3, 5), seed=1), P((5,), seed=2), P((5,), seed=3)
    w, bias = P((5, 4), seed=4), P((4,), seed=5)
    target = np.random.default_rng(6).normal(size=(2, 3, 4))

    def loss():
        return mse(linear(layer_norm(x, g, bta), w, bias), target)

    errs = check_grads(loss, {"x": x, "g": g, "b": bta, "w": w, "bias": bias})
    assert max(errs.values()) < 1e-7, errs


def test_encoder_layer_gradients():
    p = _layer(8, seed=3, scale=0.4)
    x = P((2, 5, 8), seed=7)
    valid = np.array([[1, 1, 1, 1, 1], [1, 1, 1, 0, 0]], dtype=bool)
    target = np.random.default_rng(8).normal(size=(2, 5, 8))

    def loss():
        out, _ = encoder_forward(x, [p], heads=2, key_bias=key_padding_bias(valid))
        return mse(out, target)

    tensors = dict(p.named("l"), x=x)
    errs = check_grads(loss, tensors)
    assert max(errs.values()) < 1e-4, errs


# --- optimizer ------------------------------------------------------------------

def test_adam_zero_gradient_leaves_params():
    w = P((3, 3))
    before = w.data.copy()
    w.grad = np.zeros_like(w.data)
    adam_step({"w": w}, AdamState(), lr=0.1)
    np.testing.assert_array_equal(w.data, before)


@given(st.floats(1e-3, 1e3), st.floats(1e-5, 1e-1))
def test_adam_first_step_is_lr(g, lr):
    w = parameter(np.zeros(4))
    w.grad = np.full(4, g)
    adam_step({"w": w}, AdamState(), lr=lr)
    # bias-corrected m/sqrt(v) = g/|g| = 1 up to eps
    np.testing.assert_allclose(w.data, -lr * g / (g + 1e-8), rtol=1e-12)


def test_adam_deterministic():
    def run():
        w = P((4, 4), seed=3)
        state = AdamState()
        for i in range(5):
            zero_grad({"w": w})
            backward(tsum(relu(w) * float(i + 1)))
            adam_step({"w": w}, state, 1e-2)
        return w.data

    assert np.array_equal(run(), run())


# --- checkpoint -----------------------------------------------------------------

def test_checkpoint_round_trip(tmp_path):
    tensors = {"a": RNG.normal(size=(3, 4)), "b.c": np.array(2.5), "e": np.zeros((0, 2))}
    path = tmp_path / "t.ckpt"
    save_tensors(path, tensors)
    back = load_tensors(path)
    assert list(back) == list(tensors)
    for k in tensors:
        assert back[k].shape == tensors[k].shape
        assert np.array_equal(back[k], tensors[k])


def test_checkpoint_layout_is_little_endian(tmp_path):
    path = tmp_path / "t.ckpt"
    save_tensors(path, {"w": np.array([1.0, -2.0])})
    raw = path.read_bytes()
    assert raw[:8] == b"CUETRAJ\0"
    assert int.from_bytes(raw[8:16], "little") == 1
    assert int.from_bytes(raw[16:24], "little") == 1
    assert int.from_bytes(raw[24:32], "little") == 1 and raw[32:33] == b"w"
    assert raw[-16:] == np.array([1.0, -2.0], dtype="<f8").tobytes()


@pytest.mark.parametrize("cut", [4, 20, -3])
def test_checkpoint_truncated(tmp_path, cut):
    from cuetraj.errors import ValidationError
    path = tmp_path / "t.ckpt"
    save_tensors(path, {"w": np.ones((2, 2))})
    raw = path.read_bytes()
    path.write_bytes(raw[:cut])
    with pytest.raises(ValidationError):
        load_tensors(path)


def test_mlp_params_call():
    m = MLPParams.init(np.random.default_rng(0), 3, 4, 2)
    x = RNG.normal(size=(5, 3))
    ref = np.maximum(x @ m.w1.data + m.b1.data, 0) @ m.w2.data + m.b2.data
    np.testing.assert_allclose(m(Tensor(x)).data, ref, atol=1e-15)


def test_clip_grad_norm_rescales_jointly():
    a, b = parameter(np.zeros(2)), parameter(np.zeros(1))
    a.grad, b.grad = np.array([3.0, 0.0]), np.array([4.0])
    assert clip_grad_norm({"a": a, "b": b}, 1.0) == 5.0
    np.testing.assert_allclose(np.concatenate([a.grad, b.grad]), [0.6, 0.0, 0.8])
    assert clip_grad_norm({"a": a, "b": b}, 10.0) == pytest.approx(1.0)
    np.testing.assert_allclose(a.grad, [0.6, 0.0])
