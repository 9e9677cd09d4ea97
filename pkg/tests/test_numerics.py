import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mcformer import numerics as nx
from mcformer.errors import InvalidShape, NotScalar, ShapeError
from mcformer.numerics import Tape, Tensor, backward, grad_check, tensor_new


def leaf(arr):
    return Tensor(np.asarray(arr, dtype=float), requires_grad=True)


# --- construction ---------------------------------------------------------


def test_tensor_new_zeros():
    t = tensor_new([2, 3])
    assert t.shape == (2, 3)
    assert np.array_equal(t.data, np.zeros((2, 3)))


def test_tensor_new_value():
    assert tensor_new([1], "value", value=5.0).data.tolist() == [5.0]


def test_seeded_normal_is_bit_reproducible():
    a = tensor_new([4], "normal", seed=7)
    b = tensor_new([4], "normal", seed=7)
    assert a.data.tobytes() == b.data.tobytes()
    assert tensor_new([4], "normal", seed=8).data.tobytes() != a.data.tobytes()


@pytest.mark.parametrize("shape", [[0], [2, 0], [-1, 3], []])
def test_tensor_new_rejects_bad_shape(shape):
    with pytest.raises(InvalidShape):
        tensor_new(shape)


def test_product_of_shape_matches_data():
    t = tensor_new([3, 4, 5], "normal", seed=1)
    assert int(np.prod(t.shape)) == t.data.size


def test_reshape_does_not_touch_original_shape():
    t = tensor_new([2, 3], "value", value=1.0)
    r = t.reshape(3, 2)
    assert t.shape == (2, 3) and r.shape == (3, 2)


# --- matmul ---------------------------------------------------------------


def test_matmul_identity():
    A = np.array([[1.5, -2.0], [0.25, 8.0]])
    I = np.eye(2)
    assert np.array_equal(nx.matmul(I, A).data, A)
    assert np.array_equal(nx.matmul(A, I).data, A)


def test_matmul_hand_computed():
    # [[1*1 + 2*1], [3*1 + 4*1]]
    out = nx.matmul([[1.0, 2.0], [3.0, 4.0]], [[1.0], [1.0]])
    assert out.data.tolist() == [[3.0], [7.0]]


def test_matmul_mismatch():
    with pytest.raises(ShapeError):
        nx.matmul(np.ones((2, 3)), np.ones((4, 2)))


def test_matmul_batched_broadcast():
    rng = np.random.default_rng(0)
    a, b = rng.standard_normal((5, 2, 3)), rng.standard_normal((3, 4))
    assert np.allclose(nx.matmul(a, b).data, np.einsum("bij,jk->bik", a, b))


# --- softmax --------------------------------------------------------------


def test_softmax_uniform():
    assert np.allclose(nx.softmax([0.0, 0.0, 0.0]).data, [1 / 3] * 3, atol=1e-15)


def test_softmax_large_input_is_finite():
    s = nx.softmax([1000.0, 0.0]).data
    assert np.all(np.isfinite(s))
    assert abs(s.sum() - 1.0) < 1e-12


def test_softmax_closed_form():
    # e^{ln 2} / (e^{ln 2} + e^0) = 2/3
    s = nx.softmax([math.log(2.0), 0.0]).data
    assert abs(s[0] - 2 / 3) < 1e-12 and abs(s[1] - 1 / 3) < 1e-12


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=12))
def test_softmax_sums_to_one(xs):
    assert abs(nx.softmax(np.array(xs)).data.sum() - 1.0) < 1e-12


def test_softmax_bad_axis():
    with pytest.raises(ShapeError):
        nx.softmax(np.ones((2, 2)), axis=3)


# --- layer norm -----------------------------------------------------------


def test_layer_norm_constant_slice():
    out = nx.layer_norm(np.full((1, 4), 3.0), np.ones(4), np.zeros(4))
    assert np.array_equal(out.data, np.zeros((1, 4)))


def test_layer_norm_two_values():
    # mean 2, population std 1
    out = nx.layer_norm([[1.0, 3.0]], np.ones(2), np.zeros(2), eps=1e-14)
    assert np.allclose(out.data, [[-1.0, 1.0]], atol=1e-10)


def test_layer_norm_zero_gamma():
    x = np.random.default_rng(3).standard_normal((3, 5))
    out = nx.layer_norm(x, np.zeros(5), np.full(5, 5.0))
    assert np.array_equal(out.data, np.full((3, 5), 5.0))


def test_layer_norm_moments():
    x = np.random.default_rng(4).standard_normal((6, 7)) * 10 + 3
    out = nx.layer_norm(x, np.ones(7), np.zeros(7), eps=1e-14).data
    assert np.all(np.abs(out.mean(axis=-1)) < 1e-10)
    assert np.all(np.abs(out.var(axis=-1) - 1.0) < 1e-10)


def test_layer_norm_shape_error():
    with pytest.raises(ShapeError):
        nx.layer_norm(np.ones((2, 3)), np.ones(2), np.zeros(3))


def test_layer_norm_other_axis():
    x = np.random.default_rng(5).standard_normal((4, 3))
    a = nx.layer_norm(x, np.ones(4), np.zeros(4), axis=0).data
    b = nx.layer_norm(x.T, np.ones(4), np.zeros(4), axis=-1).data.T
    assert np.allclose(a, b)


# --- elementwise ----------------------------------------------------------


def test_relu():
    assert nx.relu([-1.0, 2.0]).data.tolist() == [0.0, 2.0]


def test_add_zeros_identity():
    x = np.random.default_rng(0).standard_normal(5)
    assert np.array_equal(nx.add(x, np.zeros(5)).data, x)


def test_gelu_fixed_point():
    assert nx.gelu([0.0]).data.tolist() == [0.0]


def test_gelu_tanh_formula():
    x = np.linspace(-3, 3, 13)
    ref = 0.5 * x * (1 + np.tanh(math.sqrt(2 / math.pi) * (x + 0.044715 * x**3)))
    assert np.allclose(nx.gelu(x).data, ref, atol=1e-15)


def test_elementwise_dispatch():
    assert nx.elementwise("scale", [1.0, 2.0], c=3.0).data.tolist() == [3.0, 6.0]
    assert nx.elementwise("sub", [1.0], [4.0]).data.tolist() == [-3.0]
    with pytest.raises(ShapeError):
        nx.elementwise("add", np.ones(3), np.ones(4))
    with pytest.raises(ValueError):
        nx.elementwise("tanh", [1.0])


# --- backward -------------------------------------------------------------


def test_backward_sum():
    x = leaf([1.0, 2.0, 3.0])
    with Tape() as tape:
        loss = nx.tsum(x)
    backward(tape, loss)
    assert x.grad.tolist() == [1.0, 1.0, 1.0]


def test_backward_square_sum():
    x = leaf([2.0, -3.0])
    with Tape() as tape:
        loss = nx.tsum(x * x)
    backward(tape, loss)
    assert x.grad.tolist() == [4.0, -6.0]


def test_backward_accumulates():
    x = leaf([2.0, -3.0])
    for _ in range(2):
        with Tape() as tape:
            loss = nx.tsum(x * x)
        backward(tape, loss)
    assert x.grad.tolist() == [8.0, -12.0]
    nx.zero_grads([x])
    assert x.grad is None


def test_backward_rejects_non_scalar():
    x = leaf([1.0, 2.0])
    with Tape() as tape:
        y = x * 2.0
    with pytest.raises(NotScalar):
        backward(tape, y)


def test_backward_rejects_foreign_loss():
    x = leaf([1.0, 2.0])
    with Tape():
        loss = nx.tsum(x)
    with pytest.raises(NotScalar):
        backward(Tape(), loss)


def test_no_tape_no_recording():
    x = leaf([1.0])
    y = x * 3.0
    assert not y.requires_grad and y.node_id is None


def test_tape_is_topological():
    x = leaf([1.0, 2.0])
    with Tape() as tape:
        y = nx.gelu(x * x + 1.0)
        nx.tsum(y)
    produced = {id(n.output): k for k, n in enumerate(tape.nodes)}
    for k, node in enumerate(tape.nodes):
        for inp in node.inputs:
            assert produced.get(id(inp), -1) < k


def test_two_layer_net_gradients_match_finite_differences():
    rng = np.random.default_rng(11)
    x = rng.standard_normal((6, 4))
    y = rng.standard_normal((6, 2))
    w1 = leaf(rng.standard_normal((4, 5)) * 0.5)
    b1 = leaf(rng.standard_normal(5) * 0.1)
    w2 = leaf(rng.standard_normal((5, 2)) * 0.5)

    def loss(_):
        h = nx.gelu(nx.matmul(x, w1) + b1)
        return nx.mean(nx.square(nx.matmul(h, w2) - y))

    for p in (w1, b1, w2):
        assert grad_check(loss, p, eps=1e-6) < 1e-5


# --- grad_check -----------------------------------------------------------


def test_grad_check_sum_is_exact():
    x = leaf(np.random.default_rng(1).standard_normal(7))
    assert grad_check(lambda t: nx.tsum(t), x, eps=1e-4) < 1e-9


def test_grad_check_softmax_sum_zero_gradient():
    x = leaf(np.random.default_rng(2).standard_normal(5))
    assert grad_check(lambda t: nx.tsum(nx.softmax(t)), x, eps=1e-4) < 1e-6


def test_grad_check_eps_range():
    with pytest.raises(ValueError):
        grad_check(lambda t: nx.tsum(t), leaf([1.0]), eps=0.1)


def test_grad_check_leaves_grad_alone():
    x = leaf([1.0, 2.0])
    x.grad = np.array([9.0, 9.0])
    grad_check(lambda t: nx.tsum(t * t), x)
    assert x.grad.tolist() == [9.0, 9.0]


_rng = np.random.default_rng(2024)
_W = _rng.standard_normal((4, 3))
_G = _rng.standard_normal(4)
_B = _rng.standard_normal(4)

# Each entry: name, function of the checked tensor, input shape, depth (ops).
UNARY_CASES = [
    ("add", lambda t: nx.tsum(nx.square(nx.add(t, _rng_const(t)))), 2),
    ("sub", lambda t: nx.tsum(nx.square(nx.sub(_rng_const(t), t))), 2),
    ("mul", lambda t: nx.tsum(nx.mul(t, t)), 1),
    ("div", lambda t: nx.tsum(nx.div(_rng_const(t), nx.add(nx.square(t), 1.0))), 3),
    ("scale", lambda t: nx.tsum(nx.square(nx.scale(t, -2.5))), 2),
    ("gelu", lambda t: nx.tsum(nx.gelu(t)), 1),
    ("softmax", lambda t: nx.tsum(nx.mul(nx.softmax(t, axis=-1), _rng_const(t))), 2),
    ("matmul", lambda t: nx.tsum(nx.square(nx.matmul(t, _W))), 2),
    ("layer_norm", lambda t: nx.tsum(nx.mul(nx.layer_norm(t, _G, _B), _rng_const(t))), 2),
    ("transpose", lambda t: nx.tsum(nx.mul(nx.transpose(t), _rng_const(t).T)), 2),
    ("index", lambda t: nx.tsum(nx.square(t[:, np.array([0, 2, 2, 1])])), 2),
    ("mean", lambda t: nx.square(nx.mean(nx.mul(t, t), axis=None)), 3),
]


def _rng_const(t):
    return np.cos(np.arange(t.size, dtype=float)).reshape(t.shape) + 0.5


@pytest.mark.parametrize("name,f,depth", UNARY_CASES, ids=[c[0] for c in UNARY_CASES])
def test_grad_check_each_op_at_random_points(name, f, depth):
    rng = np.random.default_rng(abs(hash(name)) % 2**32)
    tol = 1e-5 if depth <= 4 else 1e-4
    for _ in range(10):
        x = leaf(rng.standard_normal((3, 4)))
        assert grad_check(f, x, eps=1e-6) < tol


def test_grad_check_relu_away_from_kink():
    rng = np.random.default_rng(9)
    for _ in range(10):
        x = rng.standard_normal(6)
        x = np.where(np.abs(x) < 0.1, 0.5, x)
        assert grad_check(lambda t: nx.tsum(nx.square(nx.relu(t))), leaf(x), eps=1e-6) < 1e-5


def test_broadcast_gradients_reduce_to_input_shape():
    a = leaf(np.ones((3, 4)))
    b = leaf(np.arange(4.0))
    with Tape() as tape:
        loss = nx.tsum(a * b + b)
    backward(tape, loss)
    assert b.grad.shape == (4,)
    assert np.allclose(b.grad, 3 * np.ones(4) + 3)
