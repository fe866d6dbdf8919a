import numpy as np
import pytest

from sketchdiff import autodiff as ad

from helpers import assert_grad_close, finite_diff_grad


def test_square_gradient_at_three():
    x = ad.parameter(3.0, "x")
    loss = ad.mul(x, x)
    grads = ad.backward(loss)
    assert grads["x"] == pytest.approx(6.0, abs=1e-12)


def test_sum_of_matvec_gradient_matches_fd():
    rng = np.random.default_rng(1)
    w0 = rng.standard_normal((4, 5))
    v = rng.standard_normal((5, 1))
    w = ad.parameter(w0, "w")
    loss = ad.sum_(ad.matmul(w, ad.constant(v)))
    grads = ad.backward(loss)

    def f(vals):
        return float((vals @ v).sum())

    fd = finite_diff_grad(f, w0.copy())
    assert_grad_close(grads["w"], fd)
    # the analytic gradient is v broadcast along rows
    assert np.allclose(grads["w"], np.tile(v.T, (4, 1)), atol=1e-12)


def test_cosine_distance_of_vector_with_itself_is_stationary():
    u = ad.parameter(np.array([1.0, -2.0, 0.5]), "u")
    dot = ad.sum_(ad.mul(u, u))
    norm = ad.sqrt(ad.sum_(ad.mul(u, u)))
    loss = ad.sub(1.0, ad.div(dot, ad.mul(norm, norm)))
    grads = ad.backward(loss)
    assert np.linalg.norm(grads["u"]) <= 1e-10


def test_backward_rejects_non_scalar_loss():
    x = ad.parameter(np.ones(3), "x")
    with pytest.raises(ad.ShapeError):
        ad.backward(ad.mul(x, 2.0))


def test_backward_linearity():
    rng = np.random.default_rng(2)
    x0 = rng.standard_normal(6)

    def make():
        x = ad.parameter(x0, "x")
        f = ad.sum_(ad.mul(x, x))
        g = ad.sum_(ad.exp(ad.mul(x, 0.3)))
        return x, f, g

    a, b = 0.7, -1.3
    x, f, g = make()
    combined = ad.backward(ad.add(ad.mul(f, a), ad.mul(g, b)))["x"]
    x, f, _ = make()
    gf = ad.backward(f)["x"]
    x, _, g = make()
    gg = ad.backward(g)["x"]
    assert np.abs(combined - (a * gf + b * gg)).max() <= 1e-10


def test_forward_backward_bit_stable():
    rng = np.random.default_rng(3)
    x0 = rng.standard_normal((4, 6))
    k0 = rng.standard_normal((6, 2))

    def run():
        x = ad.parameter(x0, "x")
        out = ad.tanh(ad.matmul(x, ad.constant(k0)))
        loss = ad.mean_(ad.mul(out, out))
        return out.value.copy(), ad.backward(loss)["x"]

    v1, g1 = run()
    v2, g2 = run()
    assert np.array_equal(v1, v2) and np.array_equal(g1, g2)


def test_grad_accumulates_over_shared_subexpression():
    x = ad.parameter(2.0, "x")
    y = ad.mul(x, x)
    loss = ad.add(y, y)  # 2 x^2, dx = 4x = 8
    assert ad.backward(loss)["x"] == pytest.approx(8.0, abs=1e-12)


@pytest.mark.parametrize("shape_a,shape_b", [((3, 4), (3, 4)), ((3, 4), (1, 4)), ((2, 3, 4), (4,)), ((5,), ())])
def test_broadcast_binary_ops_match_fd(shape_a, shape_b):
    rng = np.random.default_rng(4)
    a0 = rng.standard_normal(shape_a)
    b0 = rng.standard_normal(shape_b) + 2.0  # keep divisors away from zero

    for op, npop in ((ad.add, np.add), (ad.sub, np.subtract), (ad.mul, np.multiply), (ad.div, np.divide)):
        a = ad.parameter(a0, "a")
        b = ad.parameter(b0, "b")
        grads = ad.backward(ad.sum_(op(a, b)))
        fd_a = finite_diff_grad(lambda v: float(npop(v, b0).sum()), a0.copy())
        fd_b = finite_diff_grad(lambda v: float(npop(a0, v).sum()), b0.copy())
        assert_grad_close(grads["a"], fd_a)
        assert_grad_close(grads["b"], fd_b)


def test_elementwise_unary_ops_match_fd():
    rng = np.random.default_rng(5)
    x0 = np.abs(rng.standard_normal(12)) + 0.5
    cases = [
        (ad.relu, rng.standard_normal(12) + 0.1),
        (ad.tanh, rng.standard_normal(12)),
        (ad.exp, rng.standard_normal(12)),
        (ad.log, x0),
        (ad.sqrt, x0),
        (ad.neg, rng.standard_normal(12)),
    ]
    for op, v0 in cases:
        x = ad.parameter(v0, "x")
        grads = ad.backward(ad.sum_(ad.mul(op(x), ad.constant(np.arange(1.0, 13.0)))))

        def f(vals, op=op):
            node = op(ad.constant(vals))
            return float((node.value * np.arange(1.0, 13.0)).sum())

        fd = finite_diff_grad(f, v0.copy())
        assert_grad_close(grads["x"], fd)


def test_sqrt_at_zero_uses_zero_subgradient():
    x = ad.parameter(np.array([0.0, 4.0]), "x")
    grads = ad.backward(ad.sum_(ad.sqrt(x)))
    assert grads["x"][0] == 0.0
    assert grads["x"][1] == pytest.approx(0.25, abs=1e-12)


def test_conv2d_matches_fd_for_input_and_kernel():
    rng = np.random.default_rng(6)
    x0 = rng.standard_normal((2, 3, 8, 8))
    k0 = rng.standard_normal((4, 3, 3, 3))
    for stride, pad in ((1, 1), (2, 1), (1, 0)):
        x = ad.parameter(x0, "x")
        k = ad.parameter(k0, "k")
        weights = None

        out = ad.conv2d(x, k, stride=stride, pad=pad)
        weights = np.linspace(-1.0, 1.0, out.value.size).reshape(out.value.shape)
        grads = ad.backward(ad.sum_(ad.mul(out, ad.constant(weights))))

        def f_x(vals):
            return float((ad.conv2d(ad.constant(vals), ad.constant(k0), stride=stride, pad=pad).value * weights).sum())

        def f_k(vals):
            return float((ad.conv2d(ad.constant(x0), ad.constant(vals), stride=stride, pad=pad).value * weights).sum())

        assert_grad_close(grads["x"], finite_diff_grad(f_x, x0.copy()))
        assert_grad_close(grads["k"], finite_diff_grad(f_k, k0.copy()))


def test_pad_edge_matches_fd():
    rng = np.random.default_rng(7)
    x0 = rng.standard_normal((1, 2, 5, 5))
    x = ad.parameter(x0, "x")
    out = ad.pad_edge(x, 2)
    w = np.linspace(0.5, 1.5, out.value.size).reshape(out.value.shape)
    grads = ad.backward(ad.sum_(ad.mul(out, ad.constant(w))))

    def f(vals):
        return float((ad.pad_edge(ad.constant(vals), 2).value * w).sum())

    assert_grad_close(grads["x"], finite_diff_grad(f, x0.copy()))


def test_log_softmax_and_column_pick_match_fd():
    rng = np.random.default_rng(8)
    x0 = rng.standard_normal((5, 4))
    cols = np.array([0, 3, 1, 2, 2])
    x = ad.parameter(x0, "x")
    grads = ad.backward(ad.sum_(ad.take_columns(ad.log_softmax(x, axis=1), cols)))

    def f(vals):
        z = vals - vals.max(axis=1, keepdims=True)
        ls = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
        return float(ls[np.arange(5), cols].sum())

    assert_grad_close(grads["x"], finite_diff_grad(f, x0.copy()))


def test_gather_rows_accumulates_duplicate_indices():
    t0 = np.arange(6.0).reshape(3, 2)
    t = ad.parameter(t0, "t")
    out = ad.gather_rows(t, np.array([1, 1, 2]))
    grads = ad.backward(ad.sum_(out))
    assert np.array_equal(grads["t"], np.array([[0.0, 0.0], [2.0, 2.0], [1.0, 1.0]]))


def test_constant_branches_receive_no_grad():
    x = ad.parameter(1.5, "x")
    c = ad.constant(2.0)
    loss = ad.mul(ad.add(x, c), c)
    grads = ad.backward(loss)
    assert set(grads) == {"x"}
    assert c.grad is None
