import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from edg import kernels
from edg import tensor as T
from edg.tensor import Tensor


def param(x):
    return Tensor(np.asarray(x, dtype=np.float64), requires_grad=True)


def test_matmul_identity():
    out = T.record("matmul", [np.eye(2), [[2.0], [3.0]]])
    np.testing.assert_array_equal(out.data, [[2.0], [3.0]])


def test_softmax_symmetric():
    np.testing.assert_array_equal(T.softmax(Tensor([0.0, 0.0])).data, [0.5, 0.5])


def test_matmul_shape_mismatch_names_op_and_shapes():
    with pytest.raises(T.ShapeError, match=r"matmul.*\(2, 3\).*\(4, 2\)"):
        T.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((4, 2))))


def test_unsupported_kind():
    with pytest.raises(T.UnsupportedOpError):
        T.record("conv2d", [np.zeros(3)])


def test_quadratic_gradient():
    w = param([1.0, 2.0, 3.0])
    (g,) = T.grad(T.tsum(w * w), [w])
    np.testing.assert_array_equal(g.data, [2.0, 4.0, 6.0])


def test_constant_loss_gives_zero_gradient():
    w = param([1.0, 2.0, 3.0])
    (g,) = T.grad(Tensor(5.0), [w])
    np.testing.assert_array_equal(g.data, [0.0, 0.0, 0.0])


@pytest.mark.parametrize("w0, expected", [(3.0, 2.0), (-3.0, 0.0)])
def test_relu_chain(w0, expected):
    w = param(w0)
    (g,) = T.grad(T.relu(w * 2.0), [w])
    assert g.item() == expected


def test_non_scalar_loss_rejected():
    w = param([1.0, 2.0])
    with pytest.raises(T.ShapeError):
        T.grad(w * w, [w])


def test_handle_not_on_graph():
    w = param([1.0])
    c = Tensor([2.0])
    with pytest.raises(T.GraphError):
        T.grad(T.tsum(w * c), [c])


def test_backward_returns_gradmap_with_matching_shapes():
    a, b = param(np.ones((2, 3))), param(np.ones(3))
    grads = T.backward(T.tsum(T.tanh(a + b)), [a, b])
    assert set(grads) == {a, b}
    for p, g in grads.items():
        assert g.shape == p.shape


def test_second_order_quartic():
    w = param(2.0)
    (g,) = T.grad(w * w * w * w, [w], create_graph=True)
    assert g.item() == pytest.approx(32.0, abs=1e-12)
    (h,) = T.grad(g, [w])
    assert h.item() == pytest.approx(48.0, abs=1e-6)


def test_gradient_accumulation_matches_clones():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(3, 3))
    w = param(rng.normal(size=(3, 3)))
    shared = T.tsum(T.tanh(T.matmul(w, Tensor(x)))) + T.tsum(T.exp(w * 0.1)) + T.tsum(w * w)
    (g_shared,) = T.grad(shared, [w])
    clones = [param(w.data.copy()) for _ in range(3)]
    parts = [T.tsum(T.tanh(T.matmul(clones[0], Tensor(x)))), T.tsum(T.exp(clones[1] * 0.1)), T.tsum(clones[2] * clones[2])]
    total = sum(T.grad(p, [c])[0].data for p, c in zip(parts, clones))
    np.testing.assert_allclose(g_shared.data, total, rtol=0, atol=1e-12)


def test_replay_is_bit_identical():
    def run():
        rng = np.random.default_rng(42)
        w = param(rng.normal(size=(4, 3)))
        x = Tensor(rng.normal(size=(5, 4)))
        loss = T.tsum(T.log_softmax(T.matmul(x, w)))
        (g,) = T.grad(loss, [w])
        return loss.data.tobytes(), g.data.tobytes()

    assert run() == run()


def test_finite_diff_check_polynomial():
    w = param(1.5)
    res = T.finite_diff_check(lambda ps: ps[0] * ps[0], [w], eps=1e-5)
    assert res.max_rel_error <= 1e-6
    assert res.n_checked == 1


def test_finite_diff_check_reports_kink():
    w = param(0.0)
    res = T.finite_diff_check(lambda ps: T.tensor_abs(ps[0]), [w], eps=1e-5)
    assert res.nonsmooth == [(0, 0)]
    assert res.n_checked == 0


def test_finite_diff_check_rejects_eps():
    with pytest.raises(ValueError):
        T.finite_diff_check(lambda ps: ps[0], [param(1.0)], eps=0.1)


def test_finite_diff_check_non_finite():
    w = param(1.0)
    with pytest.raises(T.NonFiniteError):
        T.finite_diff_check(lambda ps: T.log(ps[0] - 1.0), [w], eps=1e-6)


def test_nonfinite_op_raises():
    with pytest.raises(T.NonFiniteError):
        T.exp(Tensor([1000.0]))


def test_no_grad_records_nothing():
    w = param([1.0])
    with T.no_grad():
        out = w * 2.0
    assert out.node is None


# ------------------------------------------------------------- finite differences per op

finite = st.floats(-2.0, 2.0, allow_nan=False)


def _arr(shape):
    return st.lists(finite, min_size=int(np.prod(shape)), max_size=int(np.prod(shape))).map(
        lambda v: np.array(v).reshape(shape))


UNARY = {
    "tanh": T.tanh,
    "exp": T.exp,
    "softmax": T.softmax,
    "log_softmax": T.log_softmax,
    "neg": T.neg,
    "scalar_mul": lambda a: T.scalar_mul(a, -1.7),
    "sum_axis": lambda a: T.tsum(a, 0),
    "mean": lambda a: T.mean(a, -1, keepdims=True),
    "transpose": T.transpose,
    "reshape": lambda a: T.reshape(a, (-1,)),
    "slice": lambda a: a[1:, ::2],
    "fancy_index": lambda a: a[np.array([2, 0, 2])],
    "broadcast_to": lambda a: T.broadcast_to(a, (2, 3, 4)),
    "log": lambda a: T.log(T.exp(a) + 1.0),
    "relu_smooth": lambda a: T.relu(a + 10.0),
}


@pytest.mark.parametrize("name", sorted(UNARY))
@settings(max_examples=15, deadline=None)
@given(x=_arr((3, 4)))
def test_unary_ops_match_finite_differences(name, x):
    fn = UNARY[name]
    weights = Tensor(np.linspace(-1, 1, fn(Tensor(x)).size).reshape(fn(Tensor(x)).shape))
    w = param(x)
    res = T.finite_diff_check(lambda ps: T.tsum(T.mul(fn(ps[0]), weights)), [w], eps=1e-6)
    assert res.max_rel_error <= 1e-4


BINARY = {
    "add_bcast": (lambda a, b: a + b[0], (3, 4), (2, 4)),
    "sub": (lambda a, b: a - b, (3, 4), (3, 4)),
    "mul_bcast": (lambda a, b: a * b[:, :1], (3, 4), (3, 4)),
    "div": (lambda a, b: a / (T.exp(b) + 0.5), (3, 4), (3, 4)),
    "matmul": (lambda a, b: T.matmul(a, b), (3, 4), (4, 2)),
    "batched_matmul": (lambda a, b: T.matmul(T.reshape(a, (3, 2, 2)), T.reshape(b, (2, 2, 2))[0]), (3, 4), (2, 4)),
    "concat": (lambda a, b: T.concat([a, b], axis=0), (3, 4), (2, 4)),
}


@pytest.mark.parametrize("name", sorted(BINARY))
@settings(max_examples=15, deadline=None)
@given(data=st.data())
def test_binary_ops_match_finite_differences(name, data):
    fn, sa, sb = BINARY[name]
    a, b = param(data.draw(_arr(sa))), param(data.draw(_arr(sb)))
    res = T.finite_diff_check(lambda ps: T.tsum(T.tanh(fn(ps[0], ps[1]))), [a, b], eps=1e-6)
    assert res.max_rel_error <= 1e-4


@settings(max_examples=15, deadline=None)
@given(x=_arr((2, 3)))
def test_second_order_matches_finite_difference_of_gradient(x):
    # d/dw of <grad f(w), v> checked against central differences
    v = Tensor(np.linspace(-1, 1, 6).reshape(2, 3))

    def f(w):
        return T.tsum(T.log_softmax(T.tanh(w) * 2.0) * T.softmax(w))

    def gv(ps):
        (g,) = T.grad(f(ps[0]), [ps[0]], create_graph=True)
        return T.tsum(T.mul(g, v))

    res = T.finite_diff_check(gv, [param(x)], eps=1e-6)
    assert res.max_rel_error <= 1e-4


def test_log_softmax_matches_naive():
    x = np.array([[0.3, -1.2, 2.0], [5.0, 5.0, -3.0]])
    naive = np.log(np.exp(x) / np.exp(x).sum(axis=1, keepdims=True))
    np.testing.assert_allclose(T.log_softmax(Tensor(x)).data, naive, rtol=0, atol=1e-12)


@pytest.mark.skipif(len(kernels.available_backends()) < 2, reason="compiled kernels not built")
@pytest.mark.parametrize("name", ["softmax", "log_softmax"])
def test_backends_agree(name):
    rng = np.random.default_rng(3)
    x = rng.normal(size=(7, 5, 9)) * 4
    g = rng.normal(size=x.shape)
    fwd = getattr(kernels, name)
    vjp = getattr(kernels, name + "_vjp")
    ya, yb = fwd(x, backend="python"), fwd(x, backend="compiled")
    np.testing.assert_allclose(ya, yb, rtol=0, atol=1e-13)
    np.testing.assert_allclose(vjp(ya, g, backend="python"), vjp(ya, g, backend="compiled"), rtol=0, atol=1e-13)


def test_kernel_vjp_matches_graph_vjp():
    rng = np.random.default_rng(5)
    x = param(rng.normal(size=(4, 6)))
    wts = Tensor(rng.normal(size=(4, 6)))
    (fast,) = T.grad(T.tsum(T.softmax(x) * wts), [x])
    (slow,) = T.grad(T.tsum(T.softmax(x) * wts), [x], create_graph=True)
    np.testing.assert_allclose(fast.data, slow.data, rtol=0, atol=1e-14)
