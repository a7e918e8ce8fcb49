import numpy as np
import pytest

from dualfreq import gradcheck as gc
from dualfreq import nn
from dualfreq.errors import ConfigError, ShapeError, StateError


def conv_oracle(x, w, b, stride, pad):
    """Six nested loops over (c_out, y, x, c_in, ky, kx)."""
    c_in, h, wd = x.shape
    c_out, _, k, _ = w.shape
    xp = np.zeros((c_in, h + 2 * pad, wd + 2 * pad))
    xp[:, pad : pad + h, pad : pad + wd] = x
    ho = (h + 2 * pad - k) // stride + 1
    wo = (wd + 2 * pad - k) // stride + 1
    out = np.zeros((c_out, ho, wo))
    for o in range(c_out):
        for i in range(ho):
            for j in range(wo):
                s = b[o]
                for c in range(c_in):
                    for di in range(k):
                        for dj in range(k):
                            s += xp[c, i * stride + di, j * stride + dj] * w[o, c, di, dj]
                out[o, i, j] = s
    return out


def test_conv_sum_of_window():
    layer = nn.Conv2d(np.ones((1, 1, 3, 3)), np.array([0.5]))
    out = layer.forward(np.ones((1, 1, 3, 3)))
    np.testing.assert_array_equal(out, [[[[9.5]]]])


def test_conv_delta_kernel_is_identity(rng):
    w = np.zeros((2, 2, 3, 3))
    w[0, 0, 1, 1] = w[1, 1, 1, 1] = 1
    x = rng.standard_normal((1, 2, 5, 5))
    np.testing.assert_allclose(nn.Conv2d(w, np.zeros(2), 1, 1).forward(x), x)


@pytest.mark.parametrize("stride,pad", [(1, 1), (1, 0), (2, 1)])
def test_conv_matches_loop_oracle(stride, pad, rng):
    x = rng.standard_normal((3, 8, 8)).astype(np.float32)
    w = rng.standard_normal((4, 3, 3, 3)).astype(np.float32)
    b = rng.standard_normal(4).astype(np.float32)
    out = nn.Conv2d(w, b, stride, pad).forward(x[None])[0]
    np.testing.assert_allclose(out, conv_oracle(x, w, b, stride, pad), atol=1e-5)


def test_conv_output_size_and_errors():
    layer = nn.Conv2d.glorot(3, 16, 3, np.random.default_rng(0), 1, 1)
    assert layer.output_size(32, 32) == (32, 32)
    with pytest.raises(ShapeError):
        layer.forward(np.zeros((1, 2, 8, 8), dtype=np.float32))
    with pytest.raises(ShapeError):
        nn.Conv2d(np.zeros((1, 1, 3, 3)), np.zeros(1)).forward(np.zeros((1, 1, 2, 2)))
    with pytest.raises(ShapeError):
        nn.Conv2d(np.zeros((1, 1, 3, 3)), np.zeros(1), stride=0)


def test_conv_shared_filter_accumulates(rng):
    w = rng.standard_normal((2, 1, 3, 3))
    layer = nn.Conv2d(w, np.zeros(2), 1, 1)
    a, b = rng.standard_normal((1, 1, 6, 6)), rng.standard_normal((1, 1, 4, 4))
    ga, gb = rng.standard_normal((1, 2, 6, 6)), rng.standard_normal((1, 2, 4, 4))
    separate = []
    for x, g in ((a, ga), (b, gb)):
        l = nn.Conv2d(w, np.zeros(2), 1, 1)
        l.forward(x)
        l.backward(g)
        separate.append(l.grads["weight"])
    layer.forward(a)
    layer.forward(b)
    layer.backward(gb)
    layer.backward(ga)
    np.testing.assert_allclose(layer.grads["weight"], separate[0] + separate[1])


def test_maxpool_single_window():
    pool = nn.MaxPool2d(2)
    out = pool.forward(np.array([[[[1.0, 2.0], [3.0, 4.0]]]]))
    assert out.item() == 4
    g = pool.backward(np.ones((1, 1, 1, 1)))
    np.testing.assert_array_equal(g[0, 0], [[0, 0], [0, 1]])


def test_maxpool_tie_goes_to_first():
    pool = nn.MaxPool2d(2)
    out = pool.forward(np.full((1, 1, 2, 2), 7.0))
    assert out.item() == 7
    np.testing.assert_array_equal(pool.backward(np.ones((1, 1, 1, 1)))[0, 0], [[1, 0], [0, 0]])


def test_maxpool_shapes_and_mass(rng):
    pool = nn.MaxPool2d(2)
    x = rng.standard_normal((2, 3, 32, 32))
    assert pool.forward(x).shape == (2, 3, 16, 16)
    up = rng.standard_normal((2, 3, 16, 16))
    assert np.sum(pool.backward(up)) == pytest.approx(np.sum(up))
    with pytest.raises(ShapeError):
        pool.forward(np.zeros((1, 1, 3, 4)))


def test_linear_examples():
    x = np.array([[1.0, 2.0]])
    np.testing.assert_array_equal(nn.Linear(np.eye(2), np.zeros(2)).forward(x), x)
    np.testing.assert_array_equal(nn.Linear(np.array([[3.0, 4.0]]), np.array([5.0])).forward(x), [[16]])
    with pytest.raises(ShapeError):
        nn.Linear(np.eye(2), np.zeros(2)).forward(np.zeros((1, 3)))
    with pytest.raises(ShapeError):
        nn.Linear(np.eye(2), np.zeros(3))


def test_lrelu_examples():
    act = nn.LReLU()
    y = act.forward(np.array([5.0, -3.0, 0.0]))
    np.testing.assert_allclose(y, [5, -0.03, 0])
    np.testing.assert_allclose(act.backward(np.ones(3)), [1, 0.01, 1])


def test_prelu_examples():
    act = nn.PReLU(0.05, dtype=np.float64)
    np.testing.assert_allclose(act.forward(np.array([-2.0, 7.0])), [-0.1, 7.0])
    act.clear()
    act.zero_grad()
    act.forward(np.array([-2.0]))
    np.testing.assert_allclose(act.backward(np.array([1.0])), [0.05])
    assert act.grads["p"] == pytest.approx(-2.0)
    # same value by central differences on the live parameter
    probe = nn.PReLU(0.05, dtype=np.float64)

    def f():
        probe.clear()
        return float(np.sum(probe.forward(np.array([-2.0]))))

    assert gc.numeric_grad(f, probe.params["p"])[0] == pytest.approx(-2.0, rel=1e-6)


def test_sigmoid_examples():
    assert nn.sigmoid(np.array(0.0)) == 0.5
    big = nn.sigmoid(np.array([88.0, 1000.0, -1000.0], dtype=np.float32))
    assert np.all(np.isfinite(big)) and big[0] == pytest.approx(1.0) and big[2] == 0.0
    s = nn.Sigmoid()
    s.forward(np.array([0.0]))
    assert s.backward(np.array([1.0]))[0] == 0.25


def test_dropout_eval_and_zero_rate(rng):
    x = rng.standard_normal((4, 10)).astype(np.float32)
    assert nn.Dropout(0.5, rng).forward(x, train=False) is x
    assert np.array_equal(nn.Dropout(0.0, rng).forward(x, train=True), x)
    with pytest.raises(ConfigError):
        nn.Dropout(1.0)


def test_dropout_statistics():
    x = np.ones(100_000, dtype=np.float32)
    y = nn.Dropout(0.5, np.random.default_rng(3)).forward(x, train=True)
    assert abs(np.mean(y != 0) - 0.5) <= 0.01
    assert abs(np.mean(y) - 1.0) <= 0.02


def test_glorot_uniform():
    r = np.random.default_rng(1)
    w = nn.glorot_uniform((100_000,), 3, 3, r)
    assert np.max(np.abs(w)) <= 1.0
    assert abs(np.mean(w)) <= 0.01
    assert w.max() > 0.99
    assert nn.conv_fans(3, 16, 3) == (27, 144)
    with pytest.raises(ConfigError):
        nn.glorot_uniform((2,), 0, 3, r)


def test_concat_and_split():
    a, b = np.array([[1.0, 2.0]]), np.array([[3.0]])
    np.testing.assert_array_equal(nn.concat([a, b]), [[1, 2, 3]])
    np.testing.assert_array_equal(nn.concat([a]), a)
    with pytest.raises(ValueError):
        nn.concat([])
    ga, gb = nn.split_grad(np.array([[10.0, 20.0, 30.0]]), [2, 1])
    np.testing.assert_array_equal(ga, [[10, 20]])
    np.testing.assert_array_equal(gb, [[30]])


def test_backward_without_forward():
    with pytest.raises(StateError):
        nn.Linear(np.eye(2), np.zeros(2)).backward(np.zeros((1, 2)))


@pytest.mark.parametrize("name", ["conv2d", "maxpool2d", "linear", "lrelu", "prelu", "sigmoid", "dropout", "bce"])
def test_layer_gradients_match_finite_differences(name):
    for seed in range(3):
        err = gc.run_gradcheck(seed, [name])[name]
        assert err <= 1e-3, (name, seed, err)
