import math

import numpy as np
import pytest
from conftest import fd_loss_gradient, random_relu_net

from casokit import netcore as nc
from casokit.errors import DimensionError, NonFiniteError


def two_layer(seed=42, d=5, hidden=7, c=3):
    spec = nc.NetworkSpec(
        (nc.LayerSpec(d, hidden, "relu"), nc.LayerSpec(hidden, c, "identity"))
    )
    return nc.init_network(spec, seed=seed)


def test_layer_spec_validation():
    with pytest.raises(ValueError):
        nc.LayerSpec(0, 3, "relu")
    with pytest.raises(ValueError):
        nc.LayerSpec(3, -1, "relu")
    with pytest.raises(ValueError):
        nc.LayerSpec(3, 3, "tanh")


def test_network_spec_chain_and_head():
    with pytest.raises(ValueError):
        nc.NetworkSpec((nc.LayerSpec(4, 5, "relu"), nc.LayerSpec(6, 3, "identity")))
    with pytest.raises(ValueError):
        nc.NetworkSpec((nc.LayerSpec(4, 3, "relu"),))  # head must be identity
    with pytest.raises(ValueError):
        nc.NetworkSpec((nc.LayerSpec(4, 1, "identity"),))  # needs c >= 2
    spec = nc.NetworkSpec((nc.LayerSpec(4, 5, "relu"), nc.LayerSpec(5, 3, "identity")))
    assert spec.input_dim == 4
    assert spec.num_classes == 3
    assert spec.piecewise_linear
    sig = nc.NetworkSpec(
        (nc.LayerSpec(4, 5, "sigmoid"), nc.LayerSpec(5, 3, "identity"))
    )
    assert not sig.piecewise_linear


def test_network_arrays_frozen_f64():
    net = two_layer()
    assert all(W.dtype == np.float64 for W in net.weights)
    with pytest.raises(ValueError):
        net.weights[0][0, 0] = 1.0
    with pytest.raises(ValueError):
        nc.Network(net.spec, (net.weights[0],), net.biases)  # wrong arity


def test_softmax_sums_to_one():
    rng = np.random.default_rng(0)
    for _ in range(200):
        z = rng.uniform(-50.0, 50.0, size=rng.integers(2, 12))
        p = nc.softmax(z)
        assert abs(p.sum() - 1.0) <= 1e-12
        assert (p >= 0).all()


def test_softmax_extreme_logits_stable():
    p = nc.softmax(np.array([800.0, 0.0]))
    assert np.isfinite(p).all()
    assert p[0] == pytest.approx(1.0)
    q = nc.softmax(np.array([3.0, 3.0, 3.0]))
    assert np.allclose(q, 1.0 / 3.0, atol=1e-15)


def test_forward_matches_pure_python_reference():
    # independent route: plain Python loops and math.exp, no numpy
    net = two_layer(seed=42)
    x = [1.0] * 5
    Ws = [[[float(v) for v in row] for row in W] for W in net.weights]
    bs = [[float(v) for v in b] for b in net.biases]
    act = list(x)
    for layer, W, b in zip(net.spec.layers, Ws, bs):
        pre = []
        for o in range(layer.out_dim):
            s = b[o]
            for i in range(layer.in_dim):
                s += W[o][i] * act[i]
            pre.append(s)
        act = [v if v > 0 else 0.0 for v in pre] if layer.activation == "relu" else pre
    m = max(act)
    exps = [math.exp(v - m) for v in act]
    loss_ref = math.log(sum(exps)) + m - act[1]

    trace = nc.forward(net, np.ones(5), 1)
    assert np.abs(np.asarray(act) - trace.logits).max() <= 1e-12
    assert abs(trace.loss - loss_ref) <= 1e-12
    # frozen regression value for the same configuration
    assert trace.loss == pytest.approx(0.8022914540929353, abs=1e-12)


def test_forward_loss_is_neg_log_prob():
    rng = np.random.default_rng(1)
    net = random_relu_net(rng)
    for _ in range(20):
        x = rng.standard_normal(net.input_dim)
        y = int(rng.integers(net.num_classes))
        t = nc.forward(net, x, y)
        assert t.loss == pytest.approx(-math.log(t.probs[y]), rel=1e-10)
        assert t.loss >= 0.0


def test_forward_validation():
    net = two_layer()
    with pytest.raises(DimensionError):
        nc.forward(net, np.ones(4))
    with pytest.raises(NonFiniteError):
        nc.forward(net, np.array([1.0, np.inf, 0.0, 0.0, 0.0]))
    with pytest.raises(ValueError):
        nc.forward(net, np.ones(5), 3)


def test_input_gradient_matches_central_difference():
    # 100 random (net, x, y) with kink-safe x, per-component relative check
    rng = np.random.default_rng(7)
    for _ in range(100):
        net = random_relu_net(rng, d=6, hidden=9, c=4)
        x = nc.sample_kink_safe(net, rng)
        y = int(rng.integers(4))
        g = nc.input_gradient(net, x, y)
        g_fd = fd_loss_gradient(net, x, y)
        assert (np.abs(g - g_fd) <= 1e-5 * (np.abs(g_fd) + 1e-8)).all()


def test_logit_gradient_linear_model():
    spec = nc.NetworkSpec((nc.LayerSpec(4, 3, "identity"),))
    net = nc.init_network(spec, seed=5)
    x = np.array([0.5, -1.0, 2.0, 0.0])
    for j in range(3):
        gj = nc.logit_gradient(net, x, j)
        assert np.allclose(gj, net.weights[0][j], atol=1e-14)
    with pytest.raises(ValueError):
        nc.logit_gradient(net, x, 3)


def test_local_linearization_exact_on_relu():
    rng = np.random.default_rng(11)
    for _ in range(20):
        net = random_relu_net(rng)
        x = nc.sample_kink_safe(net, rng)
        trace = nc.forward(net, x)
        lin = nc.local_linearization(net, x)
        assert np.abs(lin.W.T @ x + lin.b - trace.logits).max() <= 1e-8
        assert not lin.kink_warning
        # masked weight product is the analytic W for a single hidden layer
        mask = (trace.pre_activations[0] > 0).astype(float)
        W_ref = (net.weights[0] * mask[:, None]).T @ net.weights[1].T
        assert np.abs(lin.W - W_ref).max() <= 1e-12


def test_local_linearization_gradient_identity():
    # input_gradient == W (p - y) from the linearization, kink-safe inputs
    rng = np.random.default_rng(13)
    for _ in range(20):
        net = random_relu_net(rng)
        x = nc.sample_kink_safe(net, rng)
        y = int(rng.integers(net.num_classes))
        trace = nc.forward(net, x, y)
        lin = nc.local_linearization(net, x)
        onehot = np.zeros(net.num_classes)
        onehot[y] = 1.0
        g_lin = lin.W @ (trace.probs - onehot)
        g = nc.input_gradient(net, x, y)
        assert np.abs(g - g_lin).max() <= 1e-10


def test_local_linearization_flags_kink():
    # a relu sitting exactly at zero must raise the kink flag
    spec = nc.NetworkSpec((nc.LayerSpec(2, 2, "relu"), nc.LayerSpec(2, 2, "identity")))
    W1 = np.array([[1.0, 0.0], [0.0, 1.0]])
    net = nc.Network(spec, (W1, np.eye(2)), (np.zeros(2), np.zeros(2)))
    lin = nc.local_linearization(net, np.array([0.0, 1.0]))
    assert lin.kink_warning


def test_train_reaches_high_accuracy_on_separable_blobs():
    data = nc.make_blobs(classes=4, dim=10, n_per_class=25, center_scale=4.0,
                         noise=0.4, seed=3)
    spec = nc.NetworkSpec(
        (nc.LayerSpec(10, 16, "relu"), nc.LayerSpec(16, 4, "identity"))
    )
    net = nc.init_network(spec, seed=0)
    result = nc.train_sgd(net, data, nc.TrainConfig(learning_rate=0.05, epochs=15))
    assert result.accuracy >= 0.95
    assert result.epoch_losses[-1] < result.epoch_losses[0]
    # the input network is untouched
    assert np.array_equal(net.weights[0], nc.init_network(spec, seed=0).weights[0])


def test_train_deterministic():
    data = nc.make_blobs(classes=3, dim=6, n_per_class=10, seed=1)
    spec = nc.NetworkSpec((nc.LayerSpec(6, 8, "relu"), nc.LayerSpec(8, 3, "identity")))
    net = nc.init_network(spec, seed=2)
    r1 = nc.train_sgd(net, data, nc.TrainConfig(epochs=3, seed=9))
    r2 = nc.train_sgd(net, data, nc.TrainConfig(epochs=3, seed=9))
    for a, b in zip(r1.network.weights, r2.network.weights):
        assert np.array_equal(a, b)
    assert r1.epoch_losses == r2.epoch_losses


def test_train_epochs_zero_identity():
    data = nc.make_blobs(classes=3, dim=6, n_per_class=5, seed=1)
    spec = nc.NetworkSpec((nc.LayerSpec(6, 8, "relu"), nc.LayerSpec(8, 3, "identity")))
    net = nc.init_network(spec, seed=2)
    result = nc.train_sgd(net, data, nc.TrainConfig(epochs=0))
    for a, b in zip(result.network.weights, net.weights):
        assert np.array_equal(a, b)
    assert result.epoch_losses == ()


def test_train_label_range_checked():
    X = np.zeros((4, 3))
    labels = np.array([0, 1, 2, 5])
    data = nc.Dataset(X, labels)
    spec = nc.NetworkSpec((nc.LayerSpec(3, 4, "relu"), nc.LayerSpec(4, 3, "identity")))
    net = nc.init_network(spec)
    with pytest.raises(ValueError):
        nc.train_sgd(net, data, nc.TrainConfig(epochs=1))


def test_make_blobs_shapes_and_determinism():
    d1 = nc.make_blobs(classes=5, dim=7, n_per_class=3, seed=4)
    d2 = nc.make_blobs(classes=5, dim=7, n_per_class=3, seed=4)
    assert d1.X.shape == (15, 7)
    assert np.array_equal(d1.X, d2.X)
    assert np.array_equal(d1.labels, d2.labels)
    assert sorted(set(d1.labels.tolist())) == [0, 1, 2, 3, 4]


def test_dataset_validation_and_sample():
    with pytest.raises(ValueError):
        nc.Dataset(np.zeros((3, 2)), np.zeros(4, dtype=np.int64))
    data = nc.Dataset(np.arange(6.0).reshape(3, 2), np.array([0, 1, 0]))
    s = data.sample(2)
    assert isinstance(s, nc.Sample)
    assert np.array_equal(s.x, [4.0, 5.0])
    assert s.y == 0


def test_sample_kink_safe_margin():
    rng = np.random.default_rng(21)
    net = random_relu_net(rng)
    x = nc.sample_kink_safe(net, rng, margin=1e-3)
    trace = nc.forward(net, x)
    assert float(np.abs(trace.pre_activations[0]).min()) > 1e-3
