import numpy as np
import pytest

from panolayout import autodiff as ad
from panolayout.predictor import ConfigurationError, ParamVector, Predictor, PredictorConfig, StateError

SMALL = PredictorConfig(height=32, width=32, channels=(4, 4, 4, 4), mix_channels=8, mix_kernel=3, dtype="float64")


def rel_err(a, b):
    return abs(a - b) / max(abs(a), abs(b), 1e-8)


def numeric_grad(f, x, idx, h=1e-5):
    old = x[idx]
    x[idx] = old + h
    fp = f()
    x[idx] = old - h
    fm = f()
    x[idx] = old
    return (fp - fm) / (2 * h)


@pytest.fixture
def net():
    return Predictor(SMALL)


@pytest.fixture
def batch():
    return np.random.default_rng(0).random((2, 3, 32, 32))


def test_output_shape_and_ranges(net, batch):
    theta = net.init_params(np.random.default_rng(0))
    out = net.forward(theta, batch)
    assert out.shape == (2, 3, 32)
    assert np.all(np.abs(out[:, :2]) <= np.pi / 2)
    assert np.all((out[:, 2] >= 0) & (out[:, 2] <= 1))


def test_stochastic_forward_is_deterministic(net, batch):
    theta = net.init_params(np.random.default_rng(0))
    a = net.forward(theta, batch, True, np.random.default_rng(5))
    b = net.forward(theta, batch, True, np.random.default_rng(5))
    np.testing.assert_array_equal(a, b)
    c = net.forward(theta, batch, True, np.random.default_rng(6))
    assert not np.array_equal(a, c)


def test_eval_mode_ignores_rng(net, batch):
    theta = net.init_params(np.random.default_rng(0))
    a = net.forward(theta, batch, False, np.random.default_rng(1))
    b = net.forward(theta, batch, False, np.random.default_rng(2))
    np.testing.assert_array_equal(a, b)


def test_zero_parameters_give_half_corner_score(net, batch):
    out = net.forward(net.zeros(), batch)
    np.testing.assert_allclose(out[:, 2], 0.5)
    np.testing.assert_allclose(out[:, :2], 0.0)


def test_shape_errors(net, batch):
    theta = net.init_params(np.random.default_rng(0))
    with pytest.raises(ConfigurationError):
        net.forward(theta, batch[:, :, :16])
    with pytest.raises(ConfigurationError):
        net.forward(theta.data[:-1], batch)
    with pytest.raises(ConfigurationError):
        PredictorConfig(dropout=1.0)


def test_backward_requires_forward(net):
    with pytest.raises(StateError):
        net.backward(np.zeros((1, 3, 32)))


def test_constant_loss_has_zero_gradient(net, batch):
    theta = net.init_params(np.random.default_rng(0))
    net.forward(theta, batch)
    g = net.backward(np.zeros((2, 3, 32)))
    assert np.all(g.data == 0)


def test_backward_matches_finite_differences(net, batch):
    rng = np.random.default_rng(3)
    theta = net.init_params(rng)
    up = rng.normal(size=(2, 3, 32))

    def f():
        return float(np.sum(net.predict(theta, batch) * up))

    net.forward(theta, batch)
    g = net.backward(up).data
    idx = rng.choice(net.size, 30, replace=False)
    errs = [rel_err(g[i], numeric_grad(f, theta.data, i)) for i in idx]
    assert max(errs) < 1e-4


def test_dropout_gradient_uses_drawn_mask(net, batch):
    rng = np.random.default_rng(4)
    theta = net.init_params(rng)
    up = rng.normal(size=(2, 3, 32))

    def f():
        return float(np.sum(net.forward(theta, batch, True, np.random.default_rng(9)) * up))

    net.forward(theta, batch, True, np.random.default_rng(9))
    g = net.backward(up).data
    for i in rng.choice(net.size, 10, replace=False):
        net._last = None
        assert rel_err(g[i], numeric_grad(f, theta.data, i)) < 1e-4


def test_dropout_expectation():
    x = ad.Tensor(np.array([0.7]))
    rng = np.random.default_rng(0)
    draws = [ad.dropout(x, 0.5, rng).data[0] for _ in range(10000)]
    assert abs(np.mean(draws) - 0.7) / 0.7 < 0.02


def test_param_vector_round_trip(net):
    theta = net.init_params(np.random.default_rng(1))
    copy = net.zeros()
    for name in theta.segments:
        copy.set(name, theta.get(name))
    np.testing.assert_array_equal(copy.data, theta.data)
    assert len(copy) == net.size


def test_circular_conv_matches_direct():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(1, 2, 7))
    w = rng.normal(size=(3, 2, 3))
    b = rng.normal(size=3)
    out = ad.conv1d_circular(ad.Tensor(x), ad.Tensor(w), ad.Tensor(b)).data
    ref = np.zeros((1, 3, 7))
    for o in range(3):
        for j in range(7):
            ref[0, o, j] = b[o] + sum(w[o, c, k] * x[0, c, (j + k - 1) % 7] for c in range(2) for k in range(3))
    np.testing.assert_allclose(out, ref, atol=1e-12)


def test_adam_first_step():
    theta = np.array([1.0, 1.0])
    new, st = ad.adam_step(theta, np.array([0.3, 0.6]), ad.AdamState(2), 0.01)
    step = theta - new
    assert step[0] == pytest.approx(0.01, rel=1e-5)
    assert step[1] == pytest.approx(step[0], rel=1e-5)
    assert st.t == 1
    neg, _ = ad.adam_step(theta, np.array([-2.0, 0.0]), ad.AdamState(2), 0.01)
    assert neg[0] > 1.0 and neg[1] == 1.0


def test_adam_zero_gradient_keeps_theta():
    st = ad.AdamState(1)
    st.m[:] = 0.5
    st.v[:] = 0.25
    st.t = 3
    theta, new = ad.adam_step(np.array([2.0]), np.array([0.0]), st, 0.0)
    assert theta[0] == 2.0
    assert new.m[0] == pytest.approx(0.45) and new.v[0] == pytest.approx(0.25 * 0.999)


def test_adam_rejects_non_finite():
    with pytest.raises(ad.NumericError):
        ad.adam_step(np.zeros(1), np.array([np.nan]), ad.AdamState(1), 0.1)


def test_param_vector_like_shares_segments(net):
    theta = net.init_params(np.random.default_rng(1))
    other = theta.like(np.zeros(net.size))
    assert isinstance(other, ParamVector) and other.segments == theta.segments
