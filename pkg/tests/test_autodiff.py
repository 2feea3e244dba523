import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from planopt import autodiff as ad


def numeric_grad(f, x, h=1e-5):
    """Central differences of scalar ``f`` at array ``x``."""
    x = np.array(x, dtype=float)
    g = np.zeros_like(x)
    for i in np.ndindex(x.shape):
        old = x[i]
        x[i] = old + h
        fp = f(x)
        x[i] = old - h
        fm = f(x)
        x[i] = old
        g[i] = (fp - fm) / (2 * h)
    return g


def rel_err(a, b):
    return np.max(np.abs(a - b) / np.maximum(1e-6, np.abs(a) + np.abs(b)))


def autograd(build, x):
    t = ad.Tensor(x.copy(), requires_grad=True)
    ad.backward(build(t))
    return t.grad


def check(build, x, tol=1e-4):
    g = autograd(build, x)
    n = numeric_grad(lambda v: float(build(ad.Tensor(v)).data), x)
    assert rel_err(g, n) < tol, (g, n)


def test_square_derivative():
    x = ad.Tensor(3.0)
    ad.backward(x * x)
    assert x.grad == 6.0


def test_forward_values():
    nll = ad.gaussian_nll(np.array([1.3]), ad.Tensor([1.3]), ad.Tensor([0.0]))
    assert float(nll.data[0]) == pytest.approx(0.5 * math.log(2 * math.pi))
    assert float(nll.data[0]) == pytest.approx(0.9189, abs=1e-4)
    np.testing.assert_allclose(ad.softmax(ad.Tensor(np.zeros(4))).data, 0.25)
    r = ad.gaussian_reparam(ad.Tensor([2.0]), ad.Tensor([0.0]), np.array([1.5]))
    assert float(r.data[0]) == 3.5


def test_softmax_first_component_gradient():
    check(lambda t: ad.take(ad.softmax(t), 0), np.zeros(2))
    check(lambda t: ad.take(ad.softmax(t), 0), np.array([0.3, -1.1, 2.0]))


def test_gradients_accumulate_on_leaves():
    x = ad.Tensor(np.array([1.0, 2.0]), requires_grad=True)
    ad.backward(ad.tsum(x * x))
    ad.backward(ad.tsum(x * x))
    np.testing.assert_allclose(x.grad, [4.0, 8.0])


def test_shared_subexpression_visited_once():
    x = ad.Tensor(2.0, requires_grad=True)
    y = x * x
    z = y + y  # d/dx = 4x
    ad.backward(z)
    assert x.grad == 8.0


def test_backward_needs_scalar():
    with pytest.raises(ValueError, match="scalar"):
        ad.backward(ad.Tensor(np.ones(3)) * 2.0)


def test_cycle_detected():
    a = ad.Tensor(1.0)
    b = a * 2.0
    a.parents = (b,)
    a._backward = lambda g: (g,)
    with pytest.raises(ValueError, match="cycle"):
        ad.backward(b)


def test_shape_mismatch_raises():
    with pytest.raises(ValueError):
        ad.add(ad.Tensor(np.ones((2, 3))), ad.Tensor(np.ones((3, 2))))
    with pytest.raises(ValueError):
        ad.matmul(ad.Tensor(np.ones((2, 3))), ad.Tensor(np.ones((2, 3))))


def test_clamp_blocks_gradient_outside():
    x = ad.Tensor(np.array([-6.0, 0.0, 3.0]), requires_grad=True)
    ad.backward(ad.tsum(ad.clamp(x, -5, 2)))
    np.testing.assert_array_equal(x.grad, [0.0, 1.0, 0.0])


PRIMITIVES = {
    "tanh": lambda t: ad.tsum(ad.tanh(t)),
    "exp": lambda t: ad.tsum(ad.exp(t)),
    "sigmoid": lambda t: ad.tsum(ad.sigmoid(t) * np.arange(1.0, 13.0).reshape(3, 4)),
    "softmax": lambda t: ad.tsum(ad.softmax(t) * np.arange(1.0, 13.0).reshape(3, 4)),
    "mul": lambda t: ad.tsum(t * t * 0.5),
    "pow": lambda t: ad.tsum(t**3),
    "concat": lambda t: ad.tsum(ad.concat([t, ad.tanh(t)], axis=-1) ** 2),
    "mean_axis": lambda t: ad.tsum(ad.mean(t, axis=0) ** 2),
    "take": lambda t: ad.tsum(ad.take(t, (slice(None), slice(1, 3))) ** 2),
    "row_broadcast": lambda t: ad.tsum((t + ad.take(t, 0)) ** 2),
    "matmul": lambda t: ad.tsum(ad.tanh(t @ np.linspace(-1, 1, 8).reshape(4, 2))),
    "reparam": lambda t: ad.tsum(ad.gaussian_reparam(t, ad.take(t, 0) * 0.3, np.ones((3, 4)) * 0.7) ** 2),
    "nll_mu": lambda t: ad.tsum(ad.gaussian_nll(np.ones((3, 4)), t, ad.Tensor(np.full((3, 4), 0.2)))),
    "nll_logstd": lambda t: ad.tsum(ad.gaussian_nll(np.ones((3, 4)), ad.Tensor(np.zeros((3, 4))), t * 0.5)),
    "nll_y": lambda t: ad.tsum(ad.gaussian_nll(t, ad.Tensor(np.zeros((3, 4))), ad.Tensor(np.zeros((3, 4))))),
}


@settings(max_examples=100, deadline=None)
@given(st.sampled_from(sorted(PRIMITIVES)), st.integers(0, 2**32 - 1))
def test_primitive_gradients_match_finite_differences(name, seed):
    x = np.random.default_rng(seed).uniform(-1.5, 1.5, size=(3, 4))
    check(PRIMITIVES[name], x)


def test_mlp_gradient_matches_finite_differences():
    rng = np.random.default_rng(0)
    net = ad.MLP([8, 64, 64, 3], rng)
    x = rng.standard_normal((5, 8))
    target = rng.standard_normal((5, 3))

    def loss_from_flat(flat):
        net.set_flat(flat)
        return float(np.mean((net.forward_numpy(x) - target) ** 2))

    flat = net.get_flat()
    net.set_flat(flat)
    ad.backward(ad.mean((net(x) - target) ** 2))
    g = np.concatenate([p.grad.ravel() for p in net.parameters()])
    idx = rng.choice(flat.size, size=200, replace=False)
    num = np.empty(idx.size)
    for k, i in enumerate(idx):
        e = np.zeros_like(flat)
        e[i] = 1e-5
        num[k] = (loss_from_flat(flat + e) - loss_from_flat(flat - e)) / 2e-5
    net.set_flat(flat)
    assert rel_err(g[idx], num) < 1e-4


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_softmax_sigmoid_ranges(seed):
    z = np.random.default_rng(seed).uniform(-30, 30, size=(4, 6))
    s = ad.softmax(ad.Tensor(z)).data
    assert np.all(np.abs(s.sum(axis=-1) - 1) < 1e-12)
    sg = ad.sigmoid(ad.Tensor(z * 0.5)).data
    assert np.all((sg > 0) & (sg < 1))


def test_adam_first_step_is_lr_sign():
    p = ad.Tensor(np.array([1.0, -2.0, 0.5]), requires_grad=True)
    opt = ad.Adam([p], lr=0.01)
    before = p.data.copy()
    opt.step([np.array([3.0, -0.2, 1e-3])])
    np.testing.assert_allclose(p.data - before, [-0.01, 0.01, -0.01], rtol=1e-4)


def test_adam_zero_gradient_no_change():
    p = ad.Tensor(np.array([1.0, 2.0]), requires_grad=True)
    opt = ad.Adam([p])
    opt.step([np.zeros(2)])
    np.testing.assert_array_equal(p.data, [1.0, 2.0])


def test_adam_deterministic():
    def run():
        p = ad.Tensor(np.array([0.3, -0.7]), requires_grad=True)
        opt = ad.Adam([p], lr=0.05)
        for k in range(5):
            opt.step([np.array([np.sin(k), np.cos(k)])])
        return p.data

    np.testing.assert_array_equal(run(), run())


def test_adam_skips_non_finite():
    p = ad.Tensor(np.array([1.0]), requires_grad=True)
    opt = ad.Adam([p])
    with pytest.warns(RuntimeWarning, match="skipped"):
        assert opt.step([np.array([np.nan])]) is False
    assert p.data[0] == 1.0 and opt.skipped == 1 and opt.t == 0


def test_adam_step_functional_form():
    p = ad.Tensor(np.array([1.0]), requires_grad=True)
    state = ad.Adam([p], lr=0.1)
    ad.adam_step(state, [p], [np.array([1.0])])
    assert p.data[0] == pytest.approx(0.9)
    with pytest.raises(ValueError):
        ad.adam_step(state, [ad.Tensor(1.0)], [np.array([1.0])])


def test_checkpoint_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    net = ad.MLP([5, 64, 64, 3], rng)
    path = tmp_path / "net.popnn"
    ad.save_weights(path, [net.sizes], [net.get_flat()], tail=[0.5, -1.0], meta={"kind": "test"})
    sizes, weights, tail, meta = ad.load_weights(path)
    assert sizes == [(5, 64, 64, 3)] and meta == {"kind": "test"}
    np.testing.assert_array_equal(weights[0], net.get_flat())
    np.testing.assert_array_equal(tail, [0.5, -1.0])


def test_checkpoint_corruption_detected(tmp_path):
    path = tmp_path / "net.popnn"
    ad.save_weights(path, [(2, 3)], [np.zeros(9)])
    data = path.read_bytes()
    path.write_bytes(data[:-10])
    with pytest.raises(ad.CheckpointError, match="checksum"):
        ad.load_weights(path)
    path.write_bytes(b"XXXXXX" + data[6:])
    with pytest.raises(ad.CheckpointError, match="magic"):
        ad.load_weights(path)
