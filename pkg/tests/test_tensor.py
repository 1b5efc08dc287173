import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from latentpush import nn
from latentpush.nn import tensor as tz


def t64(arr, req=True):
    return tz.Tensor(np.asarray(arr, dtype=np.float64), requires_grad=req)


def test_matmul_shape_algebra():
    a = tz.Tensor(np.zeros((2, 3)))
    b = tz.Tensor(np.zeros((3, 4)))
    assert tz.matmul(a, b).shape == (2, 4)


def test_matmul_shape_mismatch_raises():
    a = tz.Tensor(np.zeros((2, 3)))
    b = tz.Tensor(np.zeros((4, 4)))
    with pytest.raises(ValueError):
        tz.matmul(a, b)


def test_layernorm_constant_vector_is_zero_pre_affine():
    x = tz.Tensor(np.full((1, 8), 3.25, dtype=np.float32))
    out = tz.standardize(x, eps=1e-5)
    assert np.allclose(out.data, 0.0)


def test_softmax_symmetry():
    x = tz.Tensor(np.array([[0.0, 0.0]], dtype=np.float32))
    out = tz.softmax(x)
    assert np.allclose(out.data, [[0.5, 0.5]])


def test_softmax_rows_sum_to_one():
    rng = np.random.default_rng(0)
    x = tz.Tensor(rng.normal(size=(4, 7, 9)).astype(np.float32))
    out = tz.softmax(x, axis=-1)
    assert np.allclose(out.data.sum(axis=-1), 1.0, atol=1e-5)


def test_backward_sum_gives_ones():
    x = t64(np.random.default_rng(1).normal(size=(3, 5)))
    with tz.Tape() as tape:
        loss = tz.sum_(x)
    tape.backward(loss)
    assert np.allclose(x.grad, 1.0)


def test_backward_square_gives_2x():
    x = t64(np.random.default_rng(2).normal(size=(4,)))
    with tz.Tape() as tape:
        loss = tz.sum_(tz.mul(x, x))
    tape.backward(loss)
    assert np.allclose(x.grad, 2 * x.data)


def test_backward_requires_scalar_loss():
    x = t64(np.ones((2, 2)))
    with tz.Tape() as tape:
        y = x + x
    with pytest.raises(tz.TapeError):
        tape.backward(y)


def test_tape_consumed_twice_raises():
    x = t64(np.ones(3))
    with tz.Tape() as tape:
        loss = tz.sum_(x)
    tape.backward(loss)
    with pytest.raises(tz.TapeError):
        tape.backward(loss)


def test_no_tape_means_no_recording():
    x = t64(np.ones(3))
    y = x * x
    assert not y.requires_grad


def test_strict_mode_flags_nonfinite():
    x = tz.Tensor(np.array([1.0, np.nan], dtype=np.float32), requires_grad=True)
    with tz.StrictMode():
        with pytest.raises(FloatingPointError):
            x + x
    x + x  # fine outside strict mode


def test_broadcast_add_backward():
    a = t64(np.random.default_rng(3).normal(size=(2, 3, 4)))
    b = t64(np.random.default_rng(4).normal(size=(4,)))
    with tz.Tape() as tape:
        loss = tz.sum_(a + b)
    tape.backward(loss)
    assert a.grad.shape == a.shape
    assert b.grad.shape == b.shape
    assert np.allclose(b.grad, 6.0)


def test_forward_deterministic():
    rng = np.random.default_rng(5)
    x = tz.Tensor(rng.normal(size=(3, 6)).astype(np.float32))
    w = tz.Tensor(rng.normal(size=(6, 6)).astype(np.float32))
    out1 = tz.gelu(tz.matmul(x, w))
    out2 = tz.gelu(tz.matmul(x, w))
    assert np.array_equal(out1.data, out2.data)


def _fd_grad(fn, x: np.ndarray, h: float = 1e-6) -> np.ndarray:
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    while not it.finished:
        idx = it.multi_index
        orig = x[idx]
        x[idx] = orig + h
        up = fn()
        x[idx] = orig - h
        down = fn()
        x[idx] = orig
        g[idx] = (up - down) / (2 * h)
        it.iternext()
    return g


UNARY_OPS = {
    "gelu": tz.gelu,
    "tanh": tz.tanh,
    "exp": tz.exp,
    "softmax": tz.softmax,
    "standardize": tz.standardize,
    "neg": tz.neg,
    "sqrt_shifted": lambda t: tz.sqrt(t * t + 4.0),
    "mean_axis": lambda t: tz.mean(t, axis=-1),
    "sum_keep": lambda t: tz.sum_(t, axis=0, keepdims=True),
    "reshape": lambda t: tz.reshape(t, (t.size,)),
    "transpose": lambda t: tz.transpose(t),
    "slice": lambda t: t[1:, :2],
    "pow": lambda t: tz.pow_(t * t + 1.0, 1.5),
}


@pytest.mark.parametrize("name", sorted(UNARY_OPS))
def test_unary_op_gradients_match_finite_differences(name):
    op = UNARY_OPS[name]
    rng = np.random.default_rng(hash(name) % 2**32)
    x = t64(rng.normal(size=(3, 4)))
    weight = rng.normal(size=op(tz.Tensor(x.data)).shape)

    def scalarize():
        return float((op(tz.Tensor(x.data)).data * weight).sum())

    with tz.Tape() as tape:
        loss = tz.sum_(op(x) * tz.Tensor(weight))
    tape.backward(loss)
    fd = _fd_grad(scalarize, x.data)
    denom = np.maximum(np.abs(fd), 1e-6)
    assert np.max(np.abs(x.grad - fd) / denom) < 1e-3


def test_binary_op_gradients_match_finite_differences():
    rng = np.random.default_rng(17)
    for op in (tz.add, tz.sub, tz.mul, tz.div, tz.matmul):
        a = t64(rng.normal(size=(3, 3)) + (2.0 if op is tz.div else 0.0))
        b = t64(rng.normal(size=(3, 3)) + (2.0 if op is tz.div else 0.0))
        weight = rng.normal(size=(3, 3))
        with tz.Tape() as tape:
            loss = tz.sum_(op(a, b) * tz.Tensor(weight))
        tape.backward(loss)
        for leaf in (a, b):
            def scalarize(leaf=leaf):
                return float((op(tz.Tensor(a.data), tz.Tensor(b.data)).data * weight).sum())
            fd = _fd_grad(scalarize, leaf.data)
            denom = np.maximum(np.abs(fd), 1e-6)
            assert np.max(np.abs(leaf.grad - fd) / denom) < 1e-3, op.__name__


def test_batched_matmul_gradients():
    rng = np.random.default_rng(23)
    a = t64(rng.normal(size=(2, 3, 4)))
    b = t64(rng.normal(size=(4, 5)))
    weight = rng.normal(size=(2, 3, 5))
    with tz.Tape() as tape:
        loss = tz.sum_(tz.matmul(a, b) * tz.Tensor(weight))
    tape.backward(loss)
    for leaf in (a, b):
        def scalarize():
            return float((np.matmul(a.data, b.data) * weight).sum())
        fd = _fd_grad(scalarize, leaf.data)
        assert np.max(np.abs(leaf.grad - fd) / np.maximum(np.abs(fd), 1e-6)) < 1e-3


def test_embedding_and_concat_gradients():
    rng = np.random.default_rng(29)
    table = t64(rng.normal(size=(5, 3)))
    other = t64(rng.normal(size=(2, 3)))
    ids = np.array([1, 4, 1, 0])
    with tz.Tape() as tape:
        emb = tz.embedding(table, ids)
        out = tz.concat([emb, other], axis=0)
        loss = tz.sum_(out * out)
    tape.backward(loss)
    expected = np.zeros_like(table.data)
    np.add.at(expected, ids, 2 * table.data[ids])
    assert np.allclose(table.grad, expected)
    assert np.allclose(other.grad, 2 * other.data)


def test_two_layer_mlp_matches_finite_differences():
    # relative error vs central differences under 1e-3 on a random MLP
    rng = np.random.default_rng(31)
    x = np.asarray(rng.normal(size=(4, 6)), dtype=np.float64)
    w1 = t64(rng.normal(size=(6, 8)) * 0.5)
    b1 = t64(np.zeros(8))
    w2 = t64(rng.normal(size=(8, 1)) * 0.5)

    def forward():
        h = tz.gelu(tz.matmul(tz.Tensor(x), w1) + b1)
        return tz.mean(tz.mul(tz.matmul(h, w2), tz.matmul(h, w2)))

    report = nn.finite_diff_check(forward, {"w1": w1, "b1": b1, "w2": w2},
                                  np.random.default_rng(0), num_entries=32, h=1e-3)
    assert report.ok, report.failures


@settings(max_examples=25, deadline=None)
@given(st.integers(min_value=1, max_value=4), st.integers(min_value=1, max_value=6),
       st.integers(min_value=0, max_value=2**31 - 1))
def test_property_sum_mul_chain_grad(rows, cols, seed):
    rng = np.random.default_rng(seed)
    x = t64(rng.normal(size=(rows, cols)))
    with tz.Tape() as tape:
        loss = tz.sum_(x * x * 0.5)
    tape.backward(loss)
    assert np.allclose(x.grad, x.data, atol=1e-9)


def test_attention_weights_rows_sum_to_one():
    rng = np.random.default_rng(37)
    attn = nn.MultiHeadAttention(16, 4, rng)
    x = tz.Tensor(rng.normal(size=(2, 5, 16)).astype(np.float32))
    attn(x, keep_weights=True)
    assert attn.last_weights.shape == (2, 4, 5, 5)
    assert np.allclose(attn.last_weights.sum(axis=-1), 1.0, atol=1e-5)


def test_transformer_block_gradcheck_f64():
    rng = np.random.default_rng(41)
    block = nn.TransformerBlock(8, 2, rng, mlp_ratio=2, cross=True, dtype=np.float64)
    x = np.asarray(rng.normal(size=(2, 3, 8)), dtype=np.float64)
    ctx = np.asarray(rng.normal(size=(2, 4, 8)), dtype=np.float64)

    def forward():
        out = block(tz.Tensor(x), tz.Tensor(ctx))
        return tz.mean(tz.mul(out, out))

    report = nn.finite_diff_check(forward, block.parameters(), np.random.default_rng(1),
                                  num_entries=48, h=1e-4)
    assert report.ok, [f"{e.name}{e.index}: {e.rel_error:.2e}" for e in report.failures]
