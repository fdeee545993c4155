import numpy as np
import pytest

from latentfit import nn
from latentfit.errors import FormatError
from latentfit.nn import (
    DenseLayer,
    DenseNetwork,
    TrainConfig,
    backward,
    flop_breakdown,
    flop_count,
    forward,
    glorot_uniform_init,
    mse_loss,
    pack_network,
    sgd_step,
    train_epochs,
    unpack_network,
)


def _random_net(widths, seed):
    return glorot_uniform_init(widths, np.random.default_rng(seed))


def test_layer_validation():
    with pytest.raises(ValueError):
        DenseLayer(np.zeros((3, 2)), np.zeros(2))  # bias width mismatch
    with pytest.raises(ValueError):
        DenseLayer(np.zeros(3), np.zeros(3))  # not 2-D
    with pytest.raises(ValueError):
        DenseLayer(np.zeros((2, 2)), np.zeros(2), activation="relu")
    with pytest.raises(ValueError):
        DenseLayer(np.full((2, 2), np.inf), np.zeros(2))


def test_network_width_chaining():
    a = DenseLayer(np.zeros((3, 4)), np.zeros(3))
    b = DenseLayer(np.zeros((2, 3)), np.zeros(2))
    net = DenseNetwork([a, b])
    assert net.widths == [4, 3, 2]
    assert net.input_dim == 4 and net.output_dim == 2
    with pytest.raises(ValueError):
        DenseNetwork([b, a])
    with pytest.raises(ValueError):
        DenseNetwork([])


def test_forward_subtracts_bias():
    # Layer rule is F(W x - b), not F(W x + b).
    W = np.array([[1.0, 0.0], [0.0, 1.0]])
    b = np.array([0.3, -0.2])
    net = DenseNetwork([DenseLayer(W, b, activation="identity")])
    out = net.forward(np.array([1.0, 1.0]))
    np.testing.assert_allclose(out, [0.7, 1.2])


def test_forward_matches_manual_tanh_chain():
    net = _random_net([5, 4, 3], seed=1)
    x = np.random.default_rng(2).normal(size=(7, 5))
    a = x
    for layer in net.layers:
        a = np.tanh(a @ layer.weights.T - layer.biases)
    np.testing.assert_array_equal(net.forward(x), a)


def test_forward_up_to_layer():
    net = _random_net([5, 4, 3, 2], seed=3)
    x = np.random.default_rng(4).normal(size=5)
    mid = net.forward(x, up_to_layer=2)
    assert mid.shape == (3,)
    np.testing.assert_array_equal(net.sub(0, 2).forward(x), mid)
    full_via_sub = net.sub(2, len(net.layers)).forward(mid)
    np.testing.assert_array_equal(full_via_sub, net.forward(x))


def test_forward_rejects_wrong_width():
    net = _random_net([5, 3], seed=0)
    with pytest.raises(ValueError):
        net.forward(np.zeros(4))


def test_glorot_init_properties():
    widths = [100, 30, 7]
    net = glorot_uniform_init(widths, np.random.default_rng(11))
    assert net.widths == widths
    for layer, (n_in, n_out) in zip(net.layers, zip(widths[:-1], widths[1:])):
        limit = np.sqrt(6.0 / (n_in + n_out))
        assert np.max(np.abs(layer.weights)) <= limit
        np.testing.assert_array_equal(layer.biases, np.zeros(n_out))
    again = glorot_uniform_init(widths, np.random.default_rng(11))
    for a, b in zip(net.layers, again.layers):
        np.testing.assert_array_equal(a.weights, b.weights)


def test_mse_loss():
    assert mse_loss([1.0, 2.0], [1.0, 4.0]) == pytest.approx(2.0)
    assert mse_loss(np.zeros((2, 3)), np.zeros((2, 3))) == 0.0
    with pytest.raises(ValueError):
        mse_loss(np.zeros(3), np.zeros(4))


def test_backward_matches_finite_differences():
    # Central differences at h = 1e-6 agree with backprop to float64
    # accuracy on every weight and bias, including the subtracted-bias sign.
    rng = np.random.default_rng(21)
    net = _random_net([6, 5, 4, 2], seed=22)
    x = rng.normal(size=(3, 6))
    target = rng.normal(size=(3, 2)) * 0.5
    out, cache = forward(net, x)
    grads = backward(net, cache, target)
    h = 1e-6
    for li, layer in enumerate(net.layers):
        for arr, g in ((layer.weights, grads[li].dW), (layer.biases, grads[li].db)):
            it = np.nditer(arr, flags=["multi_index"])
            for _ in it:
                idx = it.multi_index
                orig = arr[idx]
                arr[idx] = orig + h
                hi = mse_loss(forward(net, x)[0], target)
                arr[idx] = orig - h
                lo = mse_loss(forward(net, x)[0], target)
                arr[idx] = orig
                fd = (hi - lo) / (2 * h)
                scale = max(abs(fd), abs(g[idx]), 1e-4)
                assert abs(fd - g[idx]) / scale < 1e-5, (li, idx)


def test_bias_gradient_sign():
    # For a single identity layer y = w x - b, dL/db = -2 (y - t) for one
    # sample, so increasing b must decrease the output.
    net = DenseNetwork([DenseLayer(np.array([[1.0]]), np.array([0.0]), "identity")])
    out, cache = forward(net, np.array([[2.0]]))
    grads = backward(net, cache, np.array([[0.0]]))
    assert grads[0].db[0] == pytest.approx(-2 * 2.0)


def test_sgd_step_updates_in_place():
    net = _random_net([3, 2], seed=5)
    w_before = net.layers[0].weights.copy()
    out, cache = forward(net, np.ones((4, 3)))
    grads = backward(net, cache, np.zeros((4, 2)))
    same = sgd_step(net, grads, 0.5)
    assert same is net
    assert not np.array_equal(net.layers[0].weights, w_before)


def test_fast_path_matches_generic_path():
    # The vectorized all-tanh update must be numerically identical to the
    # forward/backward/sgd_step reference implementation.
    rng = np.random.default_rng(31)
    inputs = rng.normal(size=(64, 8))
    targets = np.tanh(rng.normal(size=(64, 3)))
    fast = _random_net([8, 6, 3], seed=32)
    ref = _random_net([8, 6, 3], seed=32)
    loss_fast = train_epochs(fast, inputs, targets, 3, 0.05, 16, np.random.default_rng(33))
    loss_ref = nn._train_epochs_generic(ref, inputs, targets, 3, 0.05, 16, np.random.default_rng(33), "train")
    np.testing.assert_allclose(loss_fast, loss_ref, rtol=1e-12)
    for a, b in zip(fast.layers, ref.layers):
        np.testing.assert_allclose(a.weights, b.weights, rtol=1e-10, atol=1e-14)
        np.testing.assert_allclose(a.biases, b.biases, rtol=1e-10, atol=1e-14)


def test_training_reduces_loss_and_is_deterministic():
    rng = np.random.default_rng(41)
    x = rng.normal(size=(128, 4))
    y = np.tanh(x @ rng.normal(size=(4, 2)) * 0.3)
    net = _random_net([4, 8, 2], seed=42)
    losses = train_epochs(net, x, y, 40, 0.1, 32, np.random.default_rng(43))
    assert len(losses) == 40
    assert losses[-1] < 0.25 * losses[0]
    net2 = _random_net([4, 8, 2], seed=42)
    losses2 = train_epochs(net2, x, y, 40, 0.1, 32, np.random.default_rng(43))
    assert losses == losses2
    for a, b in zip(net.layers, net2.layers):
        np.testing.assert_array_equal(a.weights, b.weights)


def test_train_epochs_validation():
    net = _random_net([4, 2], seed=0)
    x = np.zeros((8, 4))
    y = np.zeros((8, 2))
    with pytest.raises(ValueError):
        train_epochs(net, x, y, 1, 0.1, 16, np.random.default_rng(0))  # batch > n
    with pytest.raises(ValueError):
        train_epochs(net, x, np.zeros((7, 2)), 1, 0.1, 4, np.random.default_rng(0))


def test_train_config_defaults_and_validation():
    cfg = TrainConfig()
    assert cfg.learning_rate == pytest.approx(0.1)
    assert cfg.batch_size == 32
    assert cfg.epochs == 100
    with pytest.raises(ValueError):
        TrainConfig(learning_rate=0.0)
    with pytest.raises(ValueError):
        TrainConfig(batch_size=0)


def test_flop_count_reference_topologies():
    exp_net = _random_net([1000, 50, 1, 50, 1000], seed=1)
    assert flop_count(exp_net) == 200_200
    assert flop_count(exp_net, up_to_layer=2) == 100_100
    osc_net = _random_net([1000, 50, 10, 3, 10, 50, 1000], seed=1)
    assert flop_count(osc_net, up_to_layer=3) == 2 * (1000 * 50 + 50 * 10 + 10 * 3)
    bd = flop_breakdown(exp_net, up_to_layer=2)
    assert bd["mac_flops"] == 100_100
    assert bd["bias_ops"] == 51
    assert bd["activation_ops"] == 51


def test_sub_view_shares_parameters():
    net = _random_net([6, 4, 3, 2], seed=7)
    tail = net.sub(1, 3)
    tail.layers[0].weights[0, 0] = 123.0
    assert net.layers[1].weights[0, 0] == 123.0


def test_cast_float32():
    net = _random_net([4, 3], seed=8)
    small = net.cast(np.float32)
    assert small.layers[0].weights.dtype == np.float32
    assert net.layers[0].weights.dtype == np.float64


def test_pack_unpack_roundtrip():
    net = _random_net([9, 5, 2], seed=9)
    blob = pack_network(net)
    back, offset = unpack_network(blob)
    assert offset == len(blob)
    assert back.widths == net.widths
    for a, b in zip(net.layers, back.layers):
        np.testing.assert_array_equal(a.weights, b.weights)
        np.testing.assert_array_equal(a.biases, b.biases)
        assert a.activation == b.activation
    assert pack_network(back) == blob


def test_unpack_rejects_corrupt_buffer():
    net = _random_net([4, 3], seed=10)
    blob = pack_network(net)
    with pytest.raises(FormatError):
        unpack_network(blob[: len(blob) // 2])
    with pytest.raises(FormatError):
        unpack_network(b"\x00" * 8)
