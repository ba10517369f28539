"""Small dense feedforward classifiers with exact forward and reverse passes.

Everything runs in float64. A network is the composition

    a_0 = x,   z_l = W_l a_{l-1} + b_l,   a_l = act_l(z_l),

with an identity activation on the last layer so that a_L are the logits.
Class probabilities are softmax(logits) and the loss is the cross entropy
-log p_y in nats. Networks are immutable once built; training returns a
new network instead of mutating in place.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, NonFiniteError

ACTIVATIONS = ("relu", "sigmoid", "identity")

# pre-activation magnitude below which a relu unit counts as sitting on a kink
KINK_EPS = 1e-12


@dataclass(frozen=True)
class LayerSpec:
    """One dense layer: out = activation(W @ in + b)."""

    in_dim: int
    out_dim: int
    activation: str

    def __post_init__(self):
        if self.in_dim < 1 or self.out_dim < 1:
            raise ValueError(
                f"layer dims must be positive, got {self.in_dim}x{self.out_dim}"
            )
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")


@dataclass(frozen=True)
class NetworkSpec:
    """Layer structure of a feedforward classifier.

    Consecutive layer dimensions must chain, the final activation must be
    'identity' (that layer produces the logits), and the output dimension
    is the class count c >= 2.
    """

    layers: tuple[LayerSpec, ...]

    def __post_init__(self):
        if len(self.layers) == 0:
            raise ValueError("a network needs at least one layer")
        for prev, cur in zip(self.layers, self.layers[1:]):
            if prev.out_dim != cur.in_dim:
                raise DimensionError(
                    f"layer dims do not chain: {prev.out_dim} -> {cur.in_dim}"
                )
        if self.layers[-1].activation != "identity":
            raise ValueError("final layer must use the identity activation")
        if self.layers[-1].out_dim < 2:
            raise ValueError("need at least 2 classes")

    @property
    def input_dim(self):
        return self.layers[0].in_dim

    @property
    def num_classes(self):
        return self.layers[-1].out_dim

    @property
    def piecewise_linear(self):
        """True when every activation is relu or identity."""
        return all(l.activation in ("relu", "identity") for l in self.layers)


def _frozen_f64(a):
    out = np.array(a, dtype=np.float64)
    out.flags.writeable = False
    return out


@dataclass(frozen=True)
class Network:
    """A NetworkSpec together with its parameters.

    weights[l] has shape (out_dim, in_dim) and biases[l] shape (out_dim,),
    matching spec.layers[l]. The arrays are copied and marked read-only at
    construction, so a Network is a value.
    """

    spec: NetworkSpec
    weights: tuple[np.ndarray, ...]
    biases: tuple[np.ndarray, ...]

    def __post_init__(self):
        if len(self.weights) != len(self.spec.layers) or len(self.biases) != len(
            self.spec.layers
        ):
            raise DimensionError("parameter count does not match layer count")
        frozen_w = []
        frozen_b = []
        for layer, W, b in zip(self.spec.layers, self.weights, self.biases):
            W = np.asarray(W, dtype=np.float64)
            b = np.asarray(b, dtype=np.float64)
            if W.shape != (layer.out_dim, layer.in_dim):
                raise DimensionError(
                    f"weight shape {W.shape} does not match layer "
                    f"({layer.out_dim}, {layer.in_dim})"
                )
            if b.shape != (layer.out_dim,):
                raise DimensionError(
                    f"bias shape {b.shape} does not match layer ({layer.out_dim},)"
                )
            if not (np.isfinite(W).all() and np.isfinite(b).all()):
                raise NonFiniteError("network parameters must be finite")
            frozen_w.append(_frozen_f64(W))
            frozen_b.append(_frozen_f64(b))
        object.__setattr__(self, "weights", tuple(frozen_w))
        object.__setattr__(self, "biases", tuple(frozen_b))

    @property
    def input_dim(self):
        return self.spec.input_dim

    @property
    def num_classes(self):
        return self.spec.num_classes


@dataclass(frozen=True)
class Sample:
    """One labelled input: x is a flat float64 vector, y a class index."""

    x: np.ndarray
    y: int

    def __post_init__(self):
        x = np.asarray(self.x, dtype=np.float64)
        if x.ndim != 1:
            raise DimensionError("sample x must be a flat vector")
        if not np.isfinite(x).all():
            raise NonFiniteError("sample x must be finite")
        if int(self.y) < 0:
            raise ValueError("label must be a nonnegative class index")
        object.__setattr__(self, "x", _frozen_f64(x))
        object.__setattr__(self, "y", int(self.y))


@dataclass(frozen=True)
class Dataset:
    """A batch of samples: X is (n, d), labels is (n,) of class indices."""

    X: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        X = np.asarray(self.X, dtype=np.float64)
        labels = np.asarray(self.labels, dtype=np.int64)
        if X.ndim != 2:
            raise DimensionError("X must be 2-d (n, d)")
        if labels.shape != (X.shape[0],):
            raise DimensionError("labels must be (n,) matching X rows")
        if not np.isfinite(X).all():
            raise NonFiniteError("dataset features must be finite")
        if X.shape[0] > 0 and labels.min() < 0:
            raise ValueError("labels must be nonnegative")
        X = X.copy()
        labels = labels.copy()
        X.flags.writeable = False
        labels.flags.writeable = False
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "labels", labels)

    @property
    def n(self):
        return self.X.shape[0]

    @property
    def dim(self):
        return self.X.shape[1]

    def sample(self, i):
        return Sample(self.X[i], int(self.labels[i]))


@dataclass(frozen=True)
class ForwardTrace:
    """Everything a single forward pass produced.

    pre_activations[l] and activations[l] correspond to layer l; logits is
    activations[-1], probs the softmax of the logits, and loss the cross
    entropy -log p_y in nats (None when no label was supplied).
    """

    x: np.ndarray
    y: int | None
    pre_activations: tuple[np.ndarray, ...]
    activations: tuple[np.ndarray, ...]
    logits: np.ndarray
    probs: np.ndarray
    loss: float | None


@dataclass(frozen=True)
class LocalLinearization:
    """Affine model logits(x') ~= W^T x' + b around the expansion point.

    W is (d, c) with column j the exact input gradient of logit j, and
    b = logits - W^T x, so the model reproduces the logits at x by
    construction. kink_warning is set when some relu pre-activation sits
    within KINK_EPS of zero. reconstruction_error is the largest logit
    residual of the affine model at a deterministic nearby probe point; it
    is ~0 inside a relu cell and grows with curvature for sigmoid layers.
    """

    W: np.ndarray
    b: np.ndarray
    kink_warning: bool
    reconstruction_error: float


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.1
    epochs: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.epochs < 0:
            raise ValueError("epochs must be nonnegative")


@dataclass(frozen=True)
class TrainResult:
    network: Network
    accuracy: float
    epoch_losses: tuple[float, ...]


def _apply_activation(z, kind):
    if kind == "relu":
        return np.maximum(z, 0.0)
    if kind == "sigmoid":
        # split by sign to stay exp-overflow free on both tails
        out = np.empty_like(z)
        pos = z >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
        ez = np.exp(z[~pos])
        out[~pos] = ez / (1.0 + ez)
        return out
    return z


def _activation_slope(z, a, kind):
    """Derivative of the activation at pre-activation z with value a."""
    if kind == "relu":
        return (z > 0.0).astype(np.float64)
    if kind == "sigmoid":
        return a * (1.0 - a)
    return np.ones_like(z)


def _forward_arrays(spec, weights, biases, x):
    pre = []
    act = []
    a = x
    for layer, W, b in zip(spec.layers, weights, biases):
        z = W @ a + b
        pre.append(z)
        a = _apply_activation(z, layer.activation)
        act.append(a)
    return pre, act


def softmax(logits):
    """Stable softmax: shifts by the max logit before exponentiating."""
    z = logits - logits.max()
    e = np.exp(z)
    return e / e.sum()


def forward(net, x, y=None):
    """Run the network on x, returning a ForwardTrace.

    When y is given, loss is the cross entropy -log p_y computed via
    logsumexp (never through the probabilities), clamped at zero against
    rounding.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (net.input_dim,):
        raise DimensionError(
            f"input shape {x.shape} does not match network ({net.input_dim},)"
        )
    if not np.isfinite(x).all():
        raise NonFiniteError("input must be finite")
    pre, act = _forward_arrays(net.spec, net.weights, net.biases, x)
    logits = act[-1]
    if not np.isfinite(logits).all():
        raise NonFiniteError("forward pass produced non-finite logits")
    probs = softmax(logits)
    loss = None
    if y is not None:
        y = int(y)
        if not 0 <= y < net.num_classes:
            raise ValueError(f"label {y} outside [0, {net.num_classes})")
        shifted = logits - logits.max()
        loss = float(np.log(np.exp(shifted).sum()) - shifted[y])
        loss = max(loss, 0.0)
    return ForwardTrace(
        x=x,
        y=y,
        pre_activations=tuple(pre),
        activations=tuple(act),
        logits=logits,
        probs=probs,
        loss=loss,
    )


def _backprop_to_input(spec, weights, pre, act, dout):
    """Pull a cotangent on the logits back to the input.

    dout may be (c,) or (c, k); the result has matching trailing shape.
    """
    da = dout
    for l in range(len(spec.layers) - 1, -1, -1):
        slope = _activation_slope(pre[l], act[l], spec.layers[l].activation)
        if da.ndim == 2:
            dz = da * slope[:, None]
        else:
            dz = da * slope
        da = weights[l].T @ dz
    return da


def input_gradient(net, x, y):
    """Exact gradient of the cross-entropy loss with respect to the input.

    Reverse mode: the logit cotangent is p - onehot(y), then one backward
    sweep through the layers.
    """
    trace = forward(net, x, y)
    dlogits = trace.probs.copy()
    dlogits[trace.y] -= 1.0
    return _backprop_to_input(
        net.spec, net.weights, trace.pre_activations, trace.activations, dlogits
    )


def logit_gradient(net, x, class_index):
    """Exact gradient of one logit (not the loss) with respect to the input."""
    trace = forward(net, x)
    c = net.num_classes
    if not 0 <= int(class_index) < c:
        raise ValueError(f"class index {class_index} outside [0, {c})")
    seed = np.zeros(c)
    seed[int(class_index)] = 1.0
    return _backprop_to_input(
        net.spec, net.weights, trace.pre_activations, trace.activations, seed
    )


def local_linearization(net, x):
    """Affine model of the logits around x.

    W is assembled by c reverse passes, one per logit (batched as a single
    matrix backprop seeded with the identity), and b = logits - W^T x.
    """
    trace = forward(net, x)
    c = net.num_classes
    seeds = np.eye(c)
    W = _backprop_to_input(
        net.spec, net.weights, trace.pre_activations, trace.activations, seeds
    )
    b = trace.logits - W.T @ trace.x

    kink = False
    for layer, z in zip(net.spec.layers, trace.pre_activations):
        if layer.activation == "relu" and np.abs(z).min() <= KINK_EPS:
            kink = True
            break

    d = net.input_dim
    step = 1e-3 * (1.0 + float(np.linalg.norm(trace.x)))
    probe = trace.x + step * np.full(d, 1.0 / np.sqrt(d))
    probe_logits = forward(net, probe).logits
    recon = float(np.abs(W.T @ probe + b - probe_logits).max())
    return LocalLinearization(W=W, b=b, kink_warning=kink, reconstruction_error=recon)


def train_sgd(net, dataset, config):
    """Plain per-sample SGD on the cross entropy, deterministic given seed.

    Visits samples in a fresh seeded permutation each epoch and applies one
    gradient step per sample. Returns a new network plus the final training
    accuracy; epochs=0 returns the parameters unchanged.
    """
    if dataset.n == 0:
        raise ValueError("cannot train on an empty dataset")
    if dataset.dim != net.input_dim:
        raise DimensionError("dataset width does not match network input")
    if int(dataset.labels.max()) >= net.num_classes:
        raise ValueError("dataset label outside the network's class range")

    spec = net.spec
    Ws = [w.copy() for w in net.weights]
    bs = [b.copy() for b in net.biases]
    L = len(spec.layers)
    lr = config.learning_rate
    rng = np.random.default_rng(config.seed)
    epoch_losses = []

    for _ in range(config.epochs):
        order = rng.permutation(dataset.n)
        total = 0.0
        for i in order:
            x = dataset.X[i]
            y = int(dataset.labels[i])
            pre, act = _forward_arrays(spec, Ws, bs, x)
            logits = act[-1]
            shifted = logits - logits.max()
            total += float(np.log(np.exp(shifted).sum()) - shifted[y])
            p = softmax(logits)
            dz = p.copy()
            dz[y] -= 1.0
            da = None
            for l in range(L - 1, -1, -1):
                if l < L - 1:
                    dz = da * _activation_slope(pre[l], act[l], spec.layers[l].activation)
                a_prev = act[l - 1] if l > 0 else x
                if l > 0:
                    da = Ws[l].T @ dz
                Ws[l] = Ws[l] - lr * np.outer(dz, a_prev)
                bs[l] = bs[l] - lr * dz
            if not all(np.isfinite(W).all() for W in Ws):
                raise NonFiniteError("training diverged to non-finite parameters")
        epoch_losses.append(total / dataset.n)

    trained = Network(spec, tuple(Ws), tuple(bs))
    correct = 0
    for i in range(dataset.n):
        t = forward(trained, dataset.X[i])
        correct += int(np.argmax(t.logits) == dataset.labels[i])
    return TrainResult(
        network=trained,
        accuracy=correct / dataset.n,
        epoch_losses=tuple(epoch_losses),
    )


def init_network(spec, seed=0):
    """He-style random initialization, deterministic given the seed."""
    rng = np.random.default_rng(seed)
    Ws = []
    bs = []
    for layer in spec.layers:
        scale = np.sqrt(2.0 / layer.in_dim)
        Ws.append(rng.standard_normal((layer.out_dim, layer.in_dim)) * scale)
        bs.append(np.zeros(layer.out_dim))
    return Network(spec, tuple(Ws), tuple(bs))


def make_blobs(classes=10, dim=16, n_per_class=20, center_scale=2.0, noise=1.0, seed=0):
    """Gaussian blob classification data, deterministic given the seed."""
    rng = np.random.default_rng(seed)
    centers = rng.standard_normal((classes, dim)) * center_scale
    X = np.empty((classes * n_per_class, dim))
    labels = np.empty(classes * n_per_class, dtype=np.int64)
    for k in range(classes):
        lo = k * n_per_class
        X[lo : lo + n_per_class] = centers[k] + noise * rng.standard_normal(
            (n_per_class, dim)
        )
        labels[lo : lo + n_per_class] = k
    return Dataset(X, labels)


def sample_kink_safe(net, rng, margin=1e-3, scale=1.0, max_tries=1000):
    """Draw a standard-normal input whose relu pre-activations all sit at
    least `margin` away from zero, resampling until that holds."""
    relu_layers = [
        i for i, l in enumerate(net.spec.layers) if l.activation == "relu"
    ]
    for _ in range(max_tries):
        x = rng.standard_normal(net.input_dim) * scale
        if not relu_layers:
            return x
        trace = forward(net, x)
        m = min(float(np.abs(trace.pre_activations[i]).min()) for i in relu_layers)
        if m > margin:
            return x
    raise RuntimeError(f"no kink-safe sample found in {max_tries} tries")
