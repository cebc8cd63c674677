"""Small deterministic MLP engine: forward, manual backprop, momentum SGD, BN.

Parameter naming: Dense layer ``i`` owns ``"{i}.weight"`` [out, in] and
``"{i}.bias"``; BatchNorm layer ``i`` owns ``"{i}.gamma"`` / ``"{i}.beta"`` and
running statistics ``"{i}.running_mean"`` / ``"{i}.running_var"``. The linear
head owns ``"head.weight"`` [C, F] and ``"head.bias"`` [C], with row ``r``
belonging to global class ``class_ids[r]``.
"""

from dataclasses import dataclass, field

import numpy as np

from .params import DimensionError, ParameterSet

TRAIN = "train"
EVAL = "eval"

BN_EPS = 1e-8
BN_MOMENTUM = 0.1
HEAD_WEIGHT = "head.weight"
HEAD_BIAS = "head.bias"


@dataclass(frozen=True)
class Dense:
    in_dim: int
    out_dim: int


@dataclass(frozen=True)
class BatchNorm:
    dim: int


@dataclass(frozen=True)
class ReLU:
    pass


@dataclass
class Classifier:
    """Head rows plus the global class each row scores."""

    weight: np.ndarray
    bias: np.ndarray
    class_ids: tuple

    def __post_init__(self):
        self.weight = np.asarray(self.weight, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        self.class_ids = tuple(int(c) for c in self.class_ids)
        if self.weight.ndim != 2 or self.bias.shape != (self.weight.shape[0],):
            raise DimensionError(
                f"classifier weight {self.weight.shape} and bias {self.bias.shape} disagree"
            )
        if len(self.class_ids) != self.weight.shape[0]:
            raise DimensionError(
                f"{len(self.class_ids)} class ids for {self.weight.shape[0]} classifier rows"
            )
        if len(set(self.class_ids)) != len(self.class_ids):
            raise ValueError("duplicate class ids in classifier")

    @classmethod
    def empty(cls, feature_dim):
        return cls(np.zeros((0, feature_dim)), np.zeros(0), ())

    def copy(self):
        return Classifier(self.weight.copy(), self.bias.copy(), self.class_ids)

    def as_params(self):
        return ParameterSet([(HEAD_WEIGHT, self.weight), (HEAD_BIAS, self.bias)])


class Model:
    """Feature extractor (dense/BN/ReLU stack) followed by a growable linear head."""

    def __init__(self, layers, params, class_ids=(), bn_stats=None, bn_momentum=BN_MOMENTUM):
        self.layers = list(layers)
        self.params = ParameterSet(params)
        self.class_ids = tuple(int(c) for c in class_ids)
        self.bn_momentum = float(bn_momentum)
        if bn_stats is None:
            bn_stats = ParameterSet()
            for i, layer in enumerate(self.layers):
                if isinstance(layer, BatchNorm):
                    bn_stats[f"{i}.running_mean"] = np.zeros(layer.dim)
                    bn_stats[f"{i}.running_var"] = np.ones(layer.dim)
        self.bn_stats = ParameterSet(bn_stats)
        self._validate()

    @classmethod
    def init(cls, layers, rng, class_ids=()):
        """Fresh model; Dense weights and biases ~ U(-1/sqrt(in), 1/sqrt(in))."""
        layers = list(layers)
        params = ParameterSet()
        for i, layer in enumerate(layers):
            if isinstance(layer, Dense):
                s = 1.0 / np.sqrt(layer.in_dim)
                params[f"{i}.weight"] = rng.uniform(-s, s, size=(layer.out_dim, layer.in_dim))
                params[f"{i}.bias"] = rng.uniform(-s, s, size=layer.out_dim)
            elif isinstance(layer, BatchNorm):
                params[f"{i}.gamma"] = np.ones(layer.dim)
                params[f"{i}.beta"] = np.zeros(layer.dim)
        feature_dim = _feature_dim(layers)
        params[HEAD_WEIGHT] = np.zeros((0, feature_dim))
        params[HEAD_BIAS] = np.zeros(0)
        model = cls(layers, params)
        if class_ids:
            model = expand_classifier(model, class_ids, rng)
        return model

    def _validate(self):
        expected = []
        for i, layer in enumerate(self.layers):
            if isinstance(layer, Dense):
                expected += [(f"{i}.weight", (layer.out_dim, layer.in_dim)), (f"{i}.bias", (layer.out_dim,))]
            elif isinstance(layer, BatchNorm):
                expected += [(f"{i}.gamma", (layer.dim,)), (f"{i}.beta", (layer.dim,))]
            elif not isinstance(layer, ReLU):
                raise TypeError(f"unsupported layer {layer!r}")
        got = self.params.shapes()[: len(expected)]
        if got != expected:
            raise DimensionError(f"extractor parameters {got} do not match layers {expected}")
        f = self.feature_dim
        w, b = self.params.get(HEAD_WEIGHT), self.params.get(HEAD_BIAS)
        if w is None or b is None or w.shape != (len(self.class_ids), f) or b.shape != (len(self.class_ids),):
            raise DimensionError(
                f"head must be [{len(self.class_ids)}, {f}] with matching bias, "
                f"got {None if w is None else w.shape} / {None if b is None else b.shape}"
            )
        if len(self.params) != len(expected) + 2:
            raise DimensionError("unexpected extra parameters in model")
        if len(set(self.class_ids)) != len(self.class_ids):
            raise ValueError("duplicate class ids")
        for name, v in self.bn_stats.items():
            if name.endswith("running_var") and np.any(v <= 0):
                raise ValueError(f"{name} must be positive")

    @property
    def feature_dim(self):
        return _feature_dim(self.layers)

    @property
    def input_dim(self):
        for layer in self.layers:
            if isinstance(layer, Dense):
                return layer.in_dim
            if isinstance(layer, BatchNorm):
                return layer.dim
        raise ValueError("model has no sized layers")

    @property
    def extractor_names(self):
        return [n for n in self.params if not n.startswith("head.")]

    @property
    def theta(self):
        return self.params.subset(self.extractor_names)

    @property
    def classifier(self):
        return Classifier(self.params[HEAD_WEIGHT], self.params[HEAD_BIAS], self.class_ids)

    def with_parts(self, theta=None, classifier=None, bn_stats=None):
        """Copy with the extractor, head, or BN statistics swapped out."""
        theta = self.theta if theta is None else theta
        self.theta.check_compatible(theta, "extractor parameters")
        classifier = self.classifier if classifier is None else classifier
        params = ParameterSet(theta).copy()
        params[HEAD_WEIGHT] = classifier.weight.copy()
        params[HEAD_BIAS] = classifier.bias.copy()
        stats = (self.bn_stats if bn_stats is None else bn_stats).copy()
        return Model(self.layers, params, classifier.class_ids, stats, self.bn_momentum)

    def copy(self):
        return Model(self.layers, self.params.copy(), self.class_ids, self.bn_stats.copy(), self.bn_momentum)

    def __repr__(self):
        arch = " -> ".join(_layer_name(l) for l in self.layers)
        return f"Model({arch} -> head[{len(self.class_ids)}])"


def _layer_name(layer):
    if isinstance(layer, Dense):
        return f"Dense({layer.in_dim},{layer.out_dim})"
    if isinstance(layer, BatchNorm):
        return f"BN({layer.dim})"
    return "ReLU"


def _feature_dim(layers):
    dim = None
    for layer in layers:
        if isinstance(layer, Dense):
            dim = layer.out_dim
        elif isinstance(layer, BatchNorm):
            dim = layer.dim
    if dim is None:
        raise ValueError("extractor needs at least one Dense or BatchNorm layer")
    return dim


def mlp(input_dim, hidden=(32, 32), batchnorm=True):
    """Dense -> [BN] -> ReLU blocks; the last block's output is the feature."""
    layers, d = [], input_dim
    for h in hidden:
        layers.append(Dense(d, h))
        if batchnorm:
            layers.append(BatchNorm(h))
        layers.append(ReLU())
        d = h
    return layers


def _run(model, x, mode, update_stats):
    if mode not in (TRAIN, EVAL):
        raise ValueError(f"mode must be {TRAIN!r} or {EVAL!r}, got {mode!r}")
    h = np.asarray(x, dtype=np.float64)
    if h.ndim != 2:
        raise DimensionError(f"batch must be 2-D, got shape {h.shape}")
    if mode == TRAIN and h.shape[0] < 2 and any(isinstance(l, BatchNorm) for l in model.layers):
        raise ValueError("TRAIN-mode batch norm needs at least 2 samples per batch")
    p = model.params
    cache = []
    for i, layer in enumerate(model.layers):
        if isinstance(layer, Dense):
            if h.shape[1] != layer.in_dim:
                raise DimensionError(
                    f"layer {i} {_layer_name(layer)} expects {layer.in_dim} input columns, got {h.shape[1]}"
                )
            cache.append(h)
            h = h @ p[f"{i}.weight"].T + p[f"{i}.bias"]
        elif isinstance(layer, BatchNorm):
            if h.shape[1] != layer.dim:
                raise DimensionError(
                    f"layer {i} {_layer_name(layer)} expects {layer.dim} input columns, got {h.shape[1]}"
                )
            if mode == TRAIN:
                mu = h.mean(axis=0)
                var = ((h - mu) ** 2).mean(axis=0)
                if update_stats:
                    m = model.bn_momentum
                    rm, rv = f"{i}.running_mean", f"{i}.running_var"
                    model.bn_stats[rm] = (1 - m) * model.bn_stats[rm] + m * mu
                    model.bn_stats[rv] = (1 - m) * model.bn_stats[rv] + m * var
            else:
                mu = model.bn_stats[f"{i}.running_mean"]
                var = model.bn_stats[f"{i}.running_var"]
            inv_std = 1.0 / np.sqrt(var + BN_EPS)
            xhat = (h - mu) * inv_std
            cache.append((xhat, inv_std))
            h = p[f"{i}.gamma"] * xhat + p[f"{i}.beta"]
        else:
            cache.append(h > 0)
            h = np.maximum(h, 0.0)
    features = h
    logits = features @ p[HEAD_WEIGHT].T + p[HEAD_BIAS]
    return features, logits, cache


def forward(model, batch, mode=EVAL):
    """Return ``(features, logits)``.

    TRAIN mode normalizes with batch statistics and folds them into the running
    statistics; EVAL mode uses the running statistics and mutates nothing.
    """
    features, logits, _ = _run(model, batch, mode, update_stats=(mode == TRAIN))
    return features, logits


def extract(model, x):
    return forward(model, x, EVAL)[0]


def predict(model, x):
    """Global class id with the highest logit for each row."""
    _, logits = forward(model, x, EVAL)
    return np.asarray(model.class_ids, dtype=np.int64)[np.argmax(logits, axis=1)]


def label_rows(model, labels):
    index = {c: r for r, c in enumerate(model.class_ids)}
    labels = np.asarray(labels)
    try:
        return np.array([index[int(c)] for c in labels], dtype=np.int64)
    except KeyError as e:
        raise ValueError(f"label {e.args[0]} is not one of the model's classes") from None


def softmax(logits):
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def backward(model, batch, labels, mode=TRAIN, update_stats=True):
    """Mean softmax cross-entropy and its gradient for every trainable parameter.

    The forward pass uses ``mode`` semantics; with ``update_stats=False`` a
    TRAIN pass leaves the running statistics untouched (used for gradient
    checks, where the loss is re-evaluated many times).
    """
    rows = label_rows(model, labels)
    if not model.class_ids:
        raise ValueError("model has no classes to score")
    features, logits, cache = _run(model, batch, mode, update_stats=(mode == TRAIN and update_stats))
    n = logits.shape[0]
    probs = softmax(logits)
    z = logits - logits.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(z).sum(axis=1))
    loss = float(np.mean(log_norm - z[np.arange(n), rows]))

    p = model.params
    grads = {}
    d_logits = probs
    d_logits[np.arange(n), rows] -= 1.0
    d_logits /= n
    grads[HEAD_WEIGHT] = d_logits.T @ features
    grads[HEAD_BIAS] = d_logits.sum(axis=0)
    dh = d_logits @ p[HEAD_WEIGHT]

    for i in range(len(model.layers) - 1, -1, -1):
        layer, c = model.layers[i], cache[i]
        if isinstance(layer, Dense):
            grads[f"{i}.weight"] = dh.T @ c
            grads[f"{i}.bias"] = dh.sum(axis=0)
            dh = dh @ p[f"{i}.weight"]
        elif isinstance(layer, BatchNorm):
            xhat, inv_std = c
            gamma = p[f"{i}.gamma"]
            grads[f"{i}.gamma"] = (dh * xhat).sum(axis=0)
            grads[f"{i}.beta"] = dh.sum(axis=0)
            dxhat = dh * gamma
            if mode == TRAIN:
                dh = inv_std / n * (n * dxhat - dxhat.sum(axis=0) - xhat * (dxhat * xhat).sum(axis=0))
            else:
                dh = dxhat * inv_std
        else:
            dh = dh * c

    ordered = ParameterSet((name, grads[name]) for name in p)
    return ordered, loss


def sgd_step(params, grads, momentum_state, lr, momentum):
    """Heavy-ball SGD: ``v <- momentum*v + g``; ``p <- p - lr*v``. Returns new (params, state)."""
    if not lr > 0:
        raise ValueError(f"lr must be positive, got {lr}")
    if not 0 <= momentum < 1:
        raise ValueError(f"momentum must be in [0, 1), got {momentum}")
    params.check_compatible(grads, "params and grads")
    params.check_compatible(momentum_state, "params and momentum buffers")
    new_v = ParameterSet()
    new_p = ParameterSet()
    for name, value in params.items():
        v = momentum * momentum_state[name] + grads[name]
        new_v[name] = v
        new_p[name] = value - lr * v
    return new_p, new_v


def expand_classifier(model, new_class_ids, rng):
    """Append head rows for ``new_class_ids``, drawn from U(-s, s), s = 1/sqrt(F).

    ``rng`` is a numpy Generator or an integer seed. Existing rows are copied
    bit for bit.
    """
    new_class_ids = tuple(int(c) for c in new_class_ids)
    overlap = set(new_class_ids) & set(model.class_ids)
    if overlap:
        raise ValueError(f"classes {sorted(overlap)} already have classifier rows")
    if len(set(new_class_ids)) != len(new_class_ids):
        raise ValueError("duplicate ids in new_class_ids")
    out = model.copy()
    if not new_class_ids:
        return out
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    f = model.feature_dim
    s = 1.0 / np.sqrt(f)
    w_new = rng.uniform(-s, s, size=(len(new_class_ids), f))
    b_new = rng.uniform(-s, s, size=len(new_class_ids))
    head = Classifier(
        np.vstack([model.params[HEAD_WEIGHT], w_new]),
        np.concatenate([model.params[HEAD_BIAS], b_new]),
        model.class_ids + new_class_ids,
    )
    return out.with_parts(classifier=head)
