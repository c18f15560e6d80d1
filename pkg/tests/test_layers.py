import numpy as np
import pytest

from gradcheck import check_gradients
from twostream_har import tensor as T
from twostream_har.exceptions import ConfigError, DimensionError, ModeError, ValidationError
from twostream_har.layers import (
    LSTM,
    BatchNorm,
    Conv1D,
    Dense,
    Dropout,
    GlobalAveragePooling,
    Sequential,
    TimeDistributed,
    check_eval,
    conv1d,
    lstm,
)
from twostream_har.tensor import Tensor, backward


def _sig(z):
    return 1.0 / (1.0 + np.exp(-z))


def naive_conv(x, k, b):
    """Direct triple loop over output positions."""
    n, c_in, length = x.shape
    c_out, _, klen = k.shape
    out = np.zeros((n, c_out, length - klen + 1))
    for i in range(n):
        for o in range(c_out):
            for p in range(length - klen + 1):
                out[i, o, p] = b[o] + sum(
                    x[i, c, p + j] * k[o, c, j] for c in range(c_in) for j in range(klen)
                )
    return out


def naive_lstm(x, w, u, b):
    """Per-sample, per-step scalar-gate recurrence; returns every hidden state."""
    batch, steps, _ = x.shape
    units = u.shape[0]
    hs = np.zeros((batch, steps, units))
    for s in range(batch):
        h = np.zeros(units)
        c = np.zeros(units)
        for t in range(steps):
            z = x[s, t] @ w + h @ u + b
            i, f, g, o = (z[k * units : (k + 1) * units] for k in range(4))
            c = _sig(f) * c + _sig(i) * np.tanh(g)
            h = _sig(o) * np.tanh(c)
            hs[s, t] = h
    return hs


class TestConv:
    def test_identity_kernel(self):
        x = np.array([[[1.0, 2.0, 3.0, 4.0]]])
        out = conv1d(x, np.ones((1, 1, 1)), np.array([0.5])).data
        np.testing.assert_array_equal(out, x + 0.5)

    def test_difference_kernel(self):
        out = conv1d(np.array([[[1.0, 2.0, 3.0, 4.0]]]), np.array([[[1.0, 0.0, -1.0]]]), np.zeros(1)).data
        np.testing.assert_array_equal(out, [[[-2.0, -2.0]]])

    @pytest.mark.parametrize("seed", range(5))
    def test_matches_direct_loop(self, seed):
        rng = np.random.default_rng(seed)
        x = rng.normal(size=(2, 3, 9))
        k = rng.normal(size=(4, 3, 3))
        b = rng.normal(size=4)
        np.testing.assert_allclose(conv1d(x, k, b).data, naive_conv(x, k, b), rtol=0, atol=1e-12)

    def test_output_length(self):
        layer = Conv1D(1, 16, 3)
        assert layer(np.zeros((4, 1, 50))).shape == (4, 16, 48)

    def test_too_short(self):
        with pytest.raises(DimensionError):
            Conv1D(1, 16, 3)(np.zeros((1, 1, 2)))

    def test_bad_config(self):
        with pytest.raises(ConfigError):
            Conv1D(1, 0, 3)


class TestBatchNorm:
    def test_constant_batch_maps_to_beta(self):
        bn = BatchNorm(3)
        bn.beta.data[:] = [0.0, 0.5, -1.0]
        out = bn(np.full((4, 3), 7.0)).data
        np.testing.assert_array_equal(out, np.tile([0.0, 0.5, -1.0], (4, 1)))

    def test_standardized_pair(self):
        bn = BatchNorm(1, eps=1e-3)
        out = bn(np.array([[-1.0], [1.0]])).data.ravel()
        np.testing.assert_allclose(out, [-1 / np.sqrt(1 + 1e-3), 1 / np.sqrt(1 + 1e-3)], rtol=1e-14)

    @pytest.mark.parametrize("seed", range(10))
    def test_train_moments(self, seed):
        rng = np.random.default_rng(seed)
        x = rng.normal(loc=rng.normal(size=5) * 10, scale=rng.uniform(0.5, 5, size=5), size=(64, 5))
        bn = BatchNorm(5, eps=1e-3)
        out = bn(x).data
        assert np.all(np.abs(out.mean(axis=0)) < 1e-10)
        # biased variance v -> v / (v + eps) exactly
        v = x.var(axis=0)
        np.testing.assert_allclose(out.var(axis=0), v / (v + 1e-3), rtol=0, atol=1e-12)
        assert np.all(np.abs(out.var(axis=0) - 1) < 1e-3 / v.min() + 1e-12)

    def test_moments_with_vanishing_eps(self):
        rng = np.random.default_rng(0)
        bn = BatchNorm(4, eps=1e-12)
        out = bn(rng.normal(size=(32, 4)) * 3 + 1).data
        assert np.all(np.abs(out.mean(axis=0)) < 1e-10)
        assert np.all(np.abs(out.var(axis=0) - 1) < 1e-6)

    def test_running_stats_are_convex_updates(self):
        rng = np.random.default_rng(1)
        bn = BatchNorm(2, momentum=0.9)
        x = rng.normal(size=(8, 2))
        bn(x)
        np.testing.assert_allclose(bn.running_mean, 0.1 * x.mean(axis=0), rtol=1e-14)
        np.testing.assert_allclose(bn.running_var, 0.9 + 0.1 * x.var(axis=0), rtol=1e-14)

    def test_eval_is_deterministic(self):
        rng = np.random.default_rng(2)
        bn = BatchNorm(3)
        bn(rng.normal(size=(10, 3)))
        bn.eval()
        x = rng.normal(size=(1, 3))
        a, b = bn(x).data, bn(x).data
        np.testing.assert_array_equal(a, b)
        np.testing.assert_allclose(a, (x - bn.running_mean) / np.sqrt(bn.running_var + 1e-3), rtol=1e-14)

    def test_batch_of_one_in_train_mode(self):
        with pytest.raises(ValidationError):
            BatchNorm(3)(np.zeros((1, 3)))

    def test_feature_axis(self):
        rng = np.random.default_rng(3)
        x = rng.normal(size=(4, 5, 16, 7))
        out = BatchNorm(16, axis=2)(x).data
        assert np.all(np.abs(out.mean(axis=(0, 1, 3))) < 1e-10)


class TestDropout:
    def test_eval_identity(self):
        d = Dropout(0.4).eval()
        x = np.arange(10.0)
        np.testing.assert_array_equal(d(x).data, x)

    def test_zero_rate_identity_in_train(self):
        x = np.arange(10.0)
        np.testing.assert_array_equal(Dropout(0.0)(x).data, x)

    def test_rate_one_rejected(self):
        with pytest.raises(ConfigError):
            Dropout(1.0)

    def test_inverted_scaling_monte_carlo(self):
        n, rate = 10**5, 0.4
        out = Dropout(rate, seed=123)(np.ones(n)).data
        assert set(np.unique(out)) <= {0.0, 1 / (1 - rate)}
        # each element is Bernoulli(1 - rate) / (1 - rate): sd sqrt(rate / (1 - rate))
        sigma = np.sqrt(rate / (1 - rate) / n)
        assert abs(out.mean() - 1.0) < 3 * sigma

    def test_seeded(self):
        a = Dropout(0.4, seed=5)(np.ones(100)).data
        b = Dropout(0.4, seed=5)(np.ones(100)).data
        np.testing.assert_array_equal(a, b)


class TestPoolingAndDense:
    def test_gap_values(self):
        gap = GlobalAveragePooling()
        np.testing.assert_array_equal(gap(np.array([[[1.0, 2.0, 3.0], [4.0, 4.0, 4.0]]])).data, [[2.0, 4.0]])

    def test_gap_gradient_is_uniform(self):
        x = Tensor(np.random.default_rng(0).normal(size=(2, 3, 5)), requires_grad=True)
        backward(T.sum_(GlobalAveragePooling()(x)))
        np.testing.assert_allclose(x.grad, np.full((2, 3, 5), 0.2), rtol=1e-15)

    def test_dense_affine_and_softmax(self):
        d = Dense(3, 2)
        x = np.array([[1.0, 2.0, 3.0]])
        np.testing.assert_allclose(d(x).data, x @ d.weight.data + d.bias.data, rtol=1e-15)
        p = Dense(3, 2, activation="softmax")(x).data
        assert abs(p.sum() - 1) < 1e-12


class TestLSTM:
    def test_zero_weights_zero_input(self):
        layer = LSTM(4, 3, return_sequences=True)
        for t in (layer.kernel, layer.recurrent_kernel):
            t.data[:] = 0
        layer.bias.data[:] = 0
        layer.bias.data[3:6] = 0.5
        np.testing.assert_array_equal(layer(np.zeros((2, 6, 4))).data, 0.0)

    def test_forget_bias_placement(self):
        b = LSTM(2, 5, forget_bias=0.5).bias.data
        np.testing.assert_array_equal(b[5:10], 0.5)
        np.testing.assert_array_equal(np.delete(b, np.s_[5:10]), 0.0)

    def test_single_step_by_hand(self):
        # one unit, one input: gates i, f, g, o
        w = np.array([[0.5, -0.3, 0.8, 0.1]])
        u = np.array([[0.2, 0.4, -0.6, 0.7]])
        b = np.array([0.1, 0.5, -0.2, 0.0])
        x = 1.5
        zi, zg, zo = 0.5 * 1.5 + 0.1, 0.8 * 1.5 - 0.2, 0.1 * 1.5
        i = 1 / (1 + np.exp(-zi))
        g = np.tanh(zg)
        o = 1 / (1 + np.exp(-zo))
        c = i * g  # c_0 = 0 so the forget gate drops out
        h = o * np.tanh(c)
        out = lstm(np.array([[[x]]]), w, u, b).data
        assert abs(out[0, 0] - h) < 1e-12

    @pytest.mark.parametrize("seed", range(5))
    def test_matches_scalar_recurrence(self, seed):
        rng = np.random.default_rng(seed)
        x = rng.normal(size=(3, 7, 4))
        w, u, b = rng.normal(size=(4, 20)) * 0.5, rng.normal(size=(5, 20)) * 0.5, rng.normal(size=20) * 0.5
        np.testing.assert_allclose(lstm(x, w, u, b, True).data, naive_lstm(x, w, u, b), rtol=0, atol=1e-12)

    def test_last_step_equals_sequence_tail(self):
        rng = np.random.default_rng(0)
        seq = LSTM(3, 4, return_sequences=True, rng=np.random.default_rng(9))
        last = LSTM(3, 4, return_sequences=False, rng=np.random.default_rng(9))
        x = rng.normal(size=(2, 6, 3))
        np.testing.assert_array_equal(last(x).data, seq(x).data[:, -1])

    def test_input_dim_mismatch(self):
        with pytest.raises(DimensionError):
            LSTM(3, 4)(np.zeros((1, 2, 5)))


class TestTimeDistributed:
    def test_equals_per_step_loop(self):
        rng = np.random.default_rng(0)
        conv = Conv1D(1, 16, 3, activation="relu", rng=rng)
        x = rng.normal(size=(3, 5, 1, 12))
        out = TimeDistributed(conv)(x).data
        loop = np.stack([conv(x[:, t]).data for t in range(5)], axis=1)
        np.testing.assert_allclose(out, loop, rtol=0, atol=1e-12)

    def test_shared_gradient_sums_over_time(self):
        rng = np.random.default_rng(1)
        conv = Conv1D(1, 2, 3, rng=rng)
        x = rng.normal(size=(2, 4, 1, 6))
        backward(T.sum_(TimeDistributed(conv)(x)))
        summed = conv.kernel.grad.copy()
        conv.kernel.grad = None
        for t in range(4):
            backward(T.sum_(conv(x[:, t])))
        np.testing.assert_allclose(summed, conv.kernel.grad, rtol=1e-13)


def test_mode_switching_and_check_eval():
    net = Sequential(Dense(2, 3), BatchNorm(3), Dropout(0.4))
    with pytest.raises(ModeError):
        check_eval(net)
    net.eval()
    check_eval(net)
    assert all(not layer.training for layer in net.layers)


def test_state_dict_round_trip():
    a = Sequential(Dense(2, 3, rng=np.random.default_rng(0)), BatchNorm(3))
    a.layers[1].running_mean[:] = [1, 2, 3]
    b = Sequential(Dense(2, 3, rng=np.random.default_rng(1)), BatchNorm(3))
    b.load_state_dict(a.state_dict())
    for k, v in a.state_dict().items():
        np.testing.assert_array_equal(b.state_dict()[k], v)


# finite-difference checks for every layer, 20 random shapes/seeds each
def _layer_case(kind, seed):
    rng = np.random.default_rng(seed)
    bsz = int(rng.integers(2, 4))
    if kind == "conv":
        c_in, length, k = int(rng.integers(1, 3)), int(rng.integers(3, 7)), int(rng.integers(1, 4))
        layer = Conv1D(c_in, int(rng.integers(1, 4)), k, rng=rng)
        layer.bias.data[:] = rng.normal(size=layer.bias.shape)
        x = Tensor(rng.normal(size=(bsz, c_in, length)), requires_grad=True)
        proj = rng.normal(size=(bsz, layer.kernel.shape[0], length - k + 1))
        return (lambda: T.sum_(layer(x) * proj)), [x, layer.kernel, layer.bias]
    if kind == "batchnorm":
        f = int(rng.integers(1, 4))
        layer = BatchNorm(f)
        layer.gamma.data[:] = rng.normal(size=f)
        layer.beta.data[:] = rng.normal(size=f)
        x = Tensor(rng.normal(size=(bsz + 2, int(rng.integers(1, 3)), f)), requires_grad=True)
        proj = rng.normal(size=x.shape)
        return (lambda: T.sum_(layer(x) * proj)), [x, layer.gamma, layer.beta]
    if kind == "dropout":
        layer = Dropout(0.4, seed=seed)
        x = Tensor(rng.normal(size=(bsz, 5)), requires_grad=True)
        proj = rng.normal(size=x.shape)

        def fn():
            layer.rng = np.random.default_rng(seed)  # same mask every evaluation
            return T.sum_(layer(x) * proj)

        return fn, [x]
    if kind == "gap":
        x = Tensor(rng.normal(size=(bsz, 3, int(rng.integers(1, 6)))), requires_grad=True)
        proj = rng.normal(size=(bsz, 3))
        return (lambda: T.sum_(GlobalAveragePooling()(x) * proj)), [x]
    if kind == "lstm":
        d, units = int(rng.integers(1, 4)), int(rng.integers(1, 4))
        seq = bool(seed % 2)
        layer = LSTM(d, units, return_sequences=seq, rng=rng)
        layer.bias.data[:] = rng.normal(size=layer.bias.shape) * 0.5
        x = Tensor(rng.normal(size=(bsz, 5, d)), requires_grad=True)
        proj = rng.normal(size=(bsz, 5, units) if seq else (bsz, units))
        return (lambda: T.sum_(layer(x) * proj)), [x, layer.kernel, layer.recurrent_kernel, layer.bias]
    if kind == "dense":
        i, o = int(rng.integers(1, 5)), int(rng.integers(2, 5))
        layer = Dense(i, o, activation="softmax" if seed % 2 else None, rng=rng)
        layer.bias.data[:] = rng.normal(size=o)
        x = Tensor(rng.normal(size=(bsz, i)), requires_grad=True)
        y = np.eye(o)[rng.integers(0, o, size=bsz)]
        if layer.activation == "softmax":
            return (lambda: T.categorical_cross_entropy(layer(x), y)), [x, layer.weight, layer.bias]
        return (lambda: T.sum_(layer(x) * y)), [x, layer.weight, layer.bias]
    if kind == "time_distributed":
        conv = Conv1D(1, 2, 3, rng=rng)
        x = Tensor(rng.normal(size=(bsz, 3, 1, 5)), requires_grad=True)
        proj = rng.normal(size=(bsz, 3, 2, 3))
        return (lambda: T.sum_(TimeDistributed(conv)(x) * proj)), [x, conv.kernel, conv.bias]
    raise KeyError(kind)


@pytest.mark.parametrize("kind", ["conv", "batchnorm", "dropout", "gap", "lstm", "dense", "time_distributed"])
def test_layer_gradients_match_finite_differences(kind):
    worst = 0.0
    for seed in range(20):
        fn, params = _layer_case(kind, seed)
        worst = max(worst, check_gradients(fn, params))
    assert worst < 1e-4, f"{kind}: max relative error {worst:.2e}"
