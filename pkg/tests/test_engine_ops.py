import math

import numpy as np
import pytest

from dancenet import engine as E

from oracles import conv2d_naive, conv3d_naive, matmul_naive, maxpool2d_naive, maxpool3d_naive


def t(data, **kw):
    return E.Tensor(np.asarray(data, dtype=np.float32), **kw)


# ---------------------------------------------------------------------------
# conv2d
# ---------------------------------------------------------------------------

def test_conv2d_worked_example():
    x = t(np.arange(1, 10).reshape(1, 1, 3, 3))
    w = t(np.ones((1, 1, 2, 2)))
    b = t([0.0])
    out = E.conv2d(x, w, b)
    oracle = conv2d_naive(x.data, w.data, b.data)
    expected = np.array([[12.0, 16.0], [24.0, 28.0]])
    np.testing.assert_allclose(out.data.reshape(2, 2), expected)
    np.testing.assert_allclose(oracle.reshape(2, 2), expected)


def test_conv2d_identity_kernel():
    rng = np.random.default_rng(0)
    x = t(rng.normal(size=(2, 1, 4, 5)))
    w = t(np.ones((1, 1, 1, 1)))
    b = t([0.0])
    out = E.conv2d(x, w, b)
    np.testing.assert_allclose(out.data, x.data)


def test_conv2d_zero_input_gives_bias():
    x = t(np.zeros((1, 2, 4, 4)))
    w = t(np.random.default_rng(1).normal(size=(3, 2, 2, 2)))
    b = t([1.0, -2.0, 0.5])
    out = E.conv2d(x, w, b)
    for f, bias in enumerate([1.0, -2.0, 0.5]):
        np.testing.assert_allclose(out.data[:, f], bias, rtol=0, atol=1e-7)


def test_conv2d_matches_oracle_randomized():
    rng = np.random.default_rng(42)
    for _ in range(20):
        n, c, f = rng.integers(1, 4, size=3)
        kh, kw = rng.integers(1, 4, size=2)
        sh, sw = rng.integers(1, 3, size=2)
        h = int(kh + rng.integers(0, 6))
        w_ = int(kw + rng.integers(0, 6))
        x = rng.normal(size=(n, c, h, w_))
        k = rng.normal(size=(f, c, kh, kw))
        b = rng.normal(size=f)
        out = E.conv2d(E.Tensor(x), E.Tensor(k), E.Tensor(b), stride=(int(sh), int(sw)))
        ref = conv2d_naive(x, k, b, stride=(int(sh), int(sw)))
        assert out.shape == ref.shape
        np.testing.assert_allclose(out.data, ref, rtol=1e-5, atol=1e-5)


def test_conv2d_output_shape_formula():
    for h, k, s, p in [(8, 3, 1, 0), (8, 3, 2, 0), (9, 5, 2, 2), (16, 5, 3, 1), (7, 7, 1, 0)]:
        x = t(np.zeros((1, 1, h, h)))
        w = t(np.zeros((1, 1, k, k)))
        out = E.conv2d(x, w, t([0.0]), stride=s, padding=p)
        expect = (h + 2 * p - k) // s + 1
        assert out.shape == (1, 1, expect, expect)


def test_conv2d_shape_errors():
    x = t(np.zeros((1, 2, 4, 4)))
    w = t(np.zeros((1, 3, 2, 2)))
    with pytest.raises(ValueError, match=r"(1, 2, 4, 4).*(1, 3, 2, 2)"):
        E.conv2d(x, w, t([0.0]))
    with pytest.raises(ValueError, match="larger than"):
        E.conv2d(x, t(np.zeros((1, 2, 5, 5))), t([0.0]))
    with pytest.raises(ValueError, match="zero-size"):
        E.Tensor(np.zeros((1, 0, 4, 4)))


# ---------------------------------------------------------------------------
# conv3d
# ---------------------------------------------------------------------------

def test_conv3d_sum_cube():
    x = t(np.arange(8).reshape(1, 1, 2, 2, 2))
    w = t(np.ones((1, 1, 2, 2, 2)))
    out = E.conv3d(x, w, t([0.0]))
    assert out.shape == (1, 1, 1, 1, 1)
    assert out.data.ravel()[0] == 28.0
    assert conv3d_naive(x.data, w.data, np.zeros(1)).ravel()[0] == 28.0


def test_conv3d_identity_kernel():
    rng = np.random.default_rng(3)
    x = t(rng.normal(size=(1, 1, 3, 4, 4)))
    out = E.conv3d(x, t(np.ones((1, 1, 1, 1, 1))), t([0.0]))
    np.testing.assert_allclose(out.data, x.data)


def test_conv3d_constant_time_equals_conv2d_with_summed_kernel():
    rng = np.random.default_rng(4)
    for _ in range(3):
        frame = rng.normal(size=(1, 2, 8, 8))
        x3 = np.repeat(frame[:, :, None], 8, axis=2)
        k3 = rng.normal(size=(3, 2, 3, 3, 3))
        b = rng.normal(size=3)
        out3 = E.conv3d(E.Tensor(x3), E.Tensor(k3), E.Tensor(b))
        out2 = E.conv2d(E.Tensor(frame), E.Tensor(k3.sum(axis=2)), E.Tensor(b))
        for ti in range(out3.shape[2]):
            np.testing.assert_allclose(out3.data[:, :, ti], out2.data, rtol=1e-4, atol=1e-5)


def test_conv3d_matches_oracle_randomized():
    rng = np.random.default_rng(11)
    for _ in range(8):
        n, c, f = 1, int(rng.integers(1, 3)), int(rng.integers(1, 3))
        kt, kh, kw = rng.integers(1, 3, size=3)
        st, sh, sw = rng.integers(1, 3, size=3)
        td = int(kt + rng.integers(0, 4))
        h = int(kh + rng.integers(0, 4))
        w_ = int(kw + rng.integers(0, 4))
        x = rng.normal(size=(n, c, td, h, w_))
        k = rng.normal(size=(f, c, kt, kh, kw))
        b = rng.normal(size=f)
        stride = (int(st), int(sh), int(sw))
        out = E.conv3d(E.Tensor(x), E.Tensor(k), E.Tensor(b), stride=stride)
        ref = conv3d_naive(x, k, b, stride=stride)
        assert out.shape == ref.shape
        np.testing.assert_allclose(out.data, ref, rtol=1e-5, atol=1e-5)


# ---------------------------------------------------------------------------
# maxpool
# ---------------------------------------------------------------------------

def test_maxpool_constant_input():
    x = t(np.full((1, 1, 6, 6), 3.25))
    out = E.maxpool(x, 2, 2)
    np.testing.assert_allclose(out.data, 3.25)


def test_maxpool_two_by_two():
    out = E.maxpool(t([[[[1.0, 2.0], [3.0, 4.0]]]]), 2, 2)
    assert out.data.ravel().tolist() == [4.0]


def test_maxpool_matches_oracle():
    rng = np.random.default_rng(5)
    for wdw, s in [(2, 2), (3, 1), (2, 1), (3, 3)]:
        x = rng.normal(size=(2, 3, 6, 6))
        out = E.maxpool(E.Tensor(x), wdw, s)
        ref = maxpool2d_naive(x, (wdw, wdw), (s, s))
        np.testing.assert_allclose(out.data, ref, rtol=1e-6)
    x = rng.normal(size=(1, 2, 4, 6, 6))
    out = E.maxpool(E.Tensor(x), (1, 2, 2), (1, 2, 2), dims=3)
    ref = maxpool3d_naive(x, (1, 2, 2), (1, 2, 2))
    np.testing.assert_allclose(out.data, ref, rtol=1e-6)


def test_maxpool_window_too_large():
    with pytest.raises(ValueError, match="window"):
        E.maxpool(t(np.zeros((1, 1, 3, 3))), 4, 1)


# ---------------------------------------------------------------------------
# linear / relu / concat / reshape
# ---------------------------------------------------------------------------

def test_linear_identity_and_sum():
    x = t([[1.0, 2.0]])
    out = E.linear(x, t(np.eye(2)), t([0.0, 0.0]))
    np.testing.assert_allclose(out.data, x.data)
    out = E.linear(x, t([[1.0], [1.0]]), t([3.0]))
    assert out.data.ravel().tolist() == [6.0]


def test_linear_matches_oracle():
    rng = np.random.default_rng(6)
    a = rng.normal(size=(4, 5))
    w = rng.normal(size=(5, 3))
    b = rng.normal(size=3)
    out = E.linear(E.Tensor(a), E.Tensor(w), E.Tensor(b))
    ref = matmul_naive(a, w) + b
    np.testing.assert_allclose(out.data, ref, rtol=1e-6)


def test_linear_dimension_mismatch():
    with pytest.raises(ValueError, match="mismatch"):
        E.linear(t(np.zeros((2, 3))), t(np.zeros((4, 2))), t(np.zeros(2)))


def test_relu():
    out = E.relu(t([[-1.0, 0.0, 2.0]]))
    assert out.data.ravel().tolist() == [0.0, 0.0, 2.0]
    neg = E.relu(t([[-5.0, -0.1]]))
    assert (neg.data == 0).all()
    pos = t([[0.5, 3.0]])
    np.testing.assert_allclose(E.relu(pos).data, pos.data)


def test_concat():
    a = t(np.ones((2, 2)))
    single = E.concat([a])
    np.testing.assert_allclose(single.data, a.data)
    b = t(np.full((2, 3), 2.0))
    out = E.concat([a, b])
    assert out.shape == (2, 5)
    np.testing.assert_allclose(out.data[:, :2], a.data)
    three = E.concat([t(np.zeros((1, 128)))] * 3)
    assert three.shape == (1, 384)
    with pytest.raises(ValueError, match="nonempty"):
        E.concat([])
    with pytest.raises(ValueError, match="batch-size"):
        E.concat([a, t(np.zeros((3, 2)))])


# ---------------------------------------------------------------------------
# softmax cross-entropy
# ---------------------------------------------------------------------------

def test_loss_uniform_logits_is_log_c():
    for c in (2, 3, 4, 10):
        logits = t(np.zeros((1, c)))
        loss = E.softmax_cross_entropy(logits, [0])
        assert abs(loss.item() - math.log(c)) < 1e-9


def test_loss_saturated_logits_no_overflow():
    loss = E.softmax_cross_entropy(t([[1000.0, 0.0]]), [0])
    assert np.isfinite(loss.item())
    assert abs(loss.item()) < 1e-6


def test_loss_explicit_value():
    # ln(e^1 + e^2 + e^3) - 3, evaluated independently in double precision
    expected = math.log(math.exp(1) + math.exp(2) + math.exp(3)) - 3.0
    loss = E.softmax_cross_entropy(t([[1.0, 2.0, 3.0]]), [2])
    assert abs(loss.item() - expected) < 1e-6


def test_loss_positivity():
    rng = np.random.default_rng(8)
    for _ in range(50):
        n = int(rng.integers(1, 5))
        c = int(rng.integers(2, 6))
        logits = rng.normal(scale=3.0, size=(n, c))
        labels = rng.integers(0, c, size=n)
        loss = E.softmax_cross_entropy(E.Tensor(logits), labels)
        assert loss.item() >= 0.0


def test_loss_out_of_range_label():
    with pytest.raises(ValueError, match="out of range"):
        E.softmax_cross_entropy(t(np.zeros((1, 3))), [3])


# ---------------------------------------------------------------------------
# backward semantics, determinism and replay
# ---------------------------------------------------------------------------

def test_backward_requires_scalar():
    x = t(np.zeros((2, 2)), requires_grad=True)
    with pytest.raises(ValueError, match="scalar"):
        E.backward(E.relu(x))


def test_backward_constant_loss_leaves_gradients_zero():
    w = t([[1.0]], requires_grad=True)
    loss = E.Tensor(np.asarray(5.0))
    E.backward(loss)
    np.testing.assert_allclose(w.grad, 0.0)


def test_backward_linear_map():
    x = t([[2.0, -3.0]])
    w = t([[1.0], [1.0]], requires_grad=True)
    out = E.linear(x, w, t([0.0]))
    E.backward(E.reshape(out, ()))
    np.testing.assert_allclose(w.grad.ravel(), x.data.ravel())


def test_backward_accumulates_over_multiple_consumers():
    x = t([[1.0, 2.0]], requires_grad=True)
    w = t(np.eye(2), requires_grad=True)
    y1 = E.linear(x, w, t([0.0, 0.0]))
    y2 = E.linear(x, w, t([0.0, 0.0]))
    both = E.concat([y1, y2])
    loss = E.softmax_cross_entropy(both, [0])
    E.backward(loss)
    one = t([[1.0, 2.0]], requires_grad=True)
    single = E.concat([E.linear(one, w, t([0.0, 0.0]))] * 1)
    assert x.grad is not None and np.abs(x.grad).sum() > 0
    del one, single


def test_forward_backward_deterministic():
    def run():
        rng = np.random.default_rng(99)
        x = E.Tensor(rng.normal(size=(2, 3, 10, 10)).astype(np.float32))
        w1 = E.Tensor(rng.normal(size=(4, 3, 3, 3)).astype(np.float32), requires_grad=True)
        b1 = E.Tensor(np.zeros(4, dtype=np.float32), requires_grad=True)
        h = E.maxpool(E.relu(E.conv2d(x, w1, b1, stride=2, padding=1)), 2, 2)
        flat = E.reshape(h, (2, -1))
        w2 = E.Tensor(rng.normal(size=(flat.shape[1], 3)).astype(np.float32), requires_grad=True)
        b2 = E.Tensor(np.zeros(3, dtype=np.float32), requires_grad=True)
        loss = E.softmax_cross_entropy(E.linear(flat, w2, b2), [0, 2])
        E.backward(loss)
        return loss.item(), w1.grad.copy(), w2.grad.copy()

    l1, g1a, g1b = run()
    l2, g2a, g2b = run()
    assert l1 == l2
    assert np.array_equal(g1a, g2a) and np.array_equal(g1b, g2b)


def test_graph_replay_bit_identical():
    rng = np.random.default_rng(10)
    x = E.Tensor(rng.normal(size=(1, 2, 9, 9)).astype(np.float32))
    w = E.Tensor(rng.normal(size=(3, 2, 3, 3)).astype(np.float32), requires_grad=True)
    b = E.Tensor(rng.normal(size=3).astype(np.float32), requires_grad=True)
    out = E.maxpool(E.relu(E.conv2d(x, w, b, stride=2)), 2, 2)
    graph = E.Graph.trace(out)
    assert [n.op for n in graph.nodes] == ["conv2d", "relu", "maxpool"]
    assert graph.replay()


# ---------------------------------------------------------------------------
# SGD
# ---------------------------------------------------------------------------

def _param_set(value, grad):
    p = E.ParameterSet()
    w = t([value], requires_grad=True)
    w.grad[...] = grad
    p.add("w", w)
    return p, w


def test_sgd_single_step():
    p, w = _param_set(1.0, 0.5)
    E.sgd_step(p, 0.1)
    np.testing.assert_allclose(w.data, [0.95])
    np.testing.assert_allclose(w.grad, [0.0])


def test_sgd_zero_gradient_no_change():
    p, w = _param_set(2.0, 0.0)
    E.sgd_step(p, 0.1)
    np.testing.assert_allclose(w.data, [2.0])


def test_sgd_two_steps_constant_gradient():
    p, w = _param_set(1.0, 0.25)
    E.sgd_step(p, 0.1)
    w.grad[...] = 0.25
    E.sgd_step(p, 0.1)
    np.testing.assert_allclose(w.data, [1.0 - 2 * 0.1 * 0.25], rtol=1e-6)


def test_sgd_missing_gradient():
    p = E.ParameterSet()
    w = t([1.0], requires_grad=True)
    w.grad = None
    p.add("w", w)
    with pytest.raises(ValueError, match="no gradient"):
        E.sgd_step(p, 0.1)


def test_parameter_set_ordering_and_uniqueness():
    p = E.ParameterSet()
    for name in ["b", "a", "c"]:
        p.add(name, t([0.0], requires_grad=True))
    assert list(p) == ["a", "b", "c"]
    with pytest.raises(ValueError, match="duplicate"):
        p.add("a", t([0.0], requires_grad=True))
