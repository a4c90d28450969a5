"""Dense ReLU networks in numpy: sampling, init, dropout forward, weighted training."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .data import ClassWeights, Dataset, class_weights, stratified_split

EPS = 1e-12
DEFAULT_DROPOUT = 0.3
MIN_LAYERS, MAX_LAYERS = 1, 4
MIN_WIDTH, MAX_WIDTH = 16, 512


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class ArchSpec:
    hidden_layers: tuple
    input_dim: int
    output_dim: int = 2
    dropout_rate: float = DEFAULT_DROPOUT
    activation: str = "relu"

    def __post_init__(self):
        hidden = tuple(int(h) for h in self.hidden_layers)
        object.__setattr__(self, "hidden_layers", hidden)
        if not hidden or any(h < 1 for h in hidden):
            raise ValueError(f"hidden layer widths must be positive, got {hidden}")
        if self.input_dim < 1 or self.output_dim < 1:
            raise ValueError("input_dim and output_dim must be positive")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError(f"dropout_rate must lie in [0, 1), got {self.dropout_rate}")
        if self.activation != "relu":
            raise ValueError("only relu activation is supported")

    @property
    def layer_dims(self):
        return (self.input_dim, *self.hidden_layers, self.output_dim)

    def to_dict(self):
        return {"hidden_layers": list(self.hidden_layers), "input_dim": self.input_dim,
                "output_dim": self.output_dim, "dropout_rate": self.dropout_rate,
                "activation": self.activation}

    @classmethod
    def from_dict(cls, d):
        return cls(tuple(d["hidden_layers"]), int(d["input_dim"]), int(d.get("output_dim", 2)),
                   float(d.get("dropout_rate", DEFAULT_DROPOUT)), d.get("activation", "relu"))


@dataclass(frozen=True)
class Network:
    """Trained or freshly initialised parameters. Treat as immutable."""

    arch: ArchSpec
    weights: tuple
    biases: tuple
    init_seed: int = 0

    def __post_init__(self):
        dims = self.arch.layer_dims
        ws, bs = [], []
        if len(self.weights) != len(dims) - 1 or len(self.biases) != len(dims) - 1:
            raise ValueError("parameter count does not match architecture")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            w = np.array(w, dtype=np.float64)
            b = np.array(b, dtype=np.float64)
            if w.shape != (dims[i], dims[i + 1]) or b.shape != (dims[i + 1],):
                raise ValueError(f"layer {i}: bad shapes {w.shape}, {b.shape}")
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise ValueError(f"layer {i}: non-finite parameters")
            w.setflags(write=False)
            b.setflags(write=False)
            ws.append(w)
            bs.append(b)
        object.__setattr__(self, "weights", tuple(ws))
        object.__setattr__(self, "biases", tuple(bs))

    @property
    def params(self):
        return [p for wb in zip(self.weights, self.biases) for p in wb]

    def with_params(self, params) -> "Network":
        return replace(self, weights=tuple(params[0::2]), biases=tuple(params[1::2]))


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    batch_size: int = 64
    learning_rate: float = 1e-3
    optimizer: str = "adam"
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_epsilon: float = 1e-8
    # None -> balanced weights from the training labels
    class_weights: Optional[ClassWeights] = None
    shuffle_seed: int = 0
    dropout_seed: int = 0
    early_stop_patience: Optional[int] = None
    validation_fraction: float = 0.2

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be positive")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be non-negative")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if not (0 < self.adam_beta1 < 1 and 0 < self.adam_beta2 < 1):
            raise ValueError("adam betas must lie in (0, 1)")
        if self.early_stop_patience is not None and self.early_stop_patience < 1:
            raise ValueError("early_stop_patience must be positive")
        if not 0 < self.validation_fraction < 1:
            raise ValueError("validation_fraction must lie in (0, 1)")

    def to_dict(self):
        d = {k: getattr(self, k) for k in self.__dataclass_fields__}
        d["class_weights"] = (None if self.class_weights is None
                              else {str(k): v for k, v in self.class_weights.weights.items()})
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if d.get("class_weights") is not None:
            d["class_weights"] = ClassWeights({int(k): v for k, v in d["class_weights"].items()})
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown train config field(s): {sorted(unknown)}")
        return cls(**d)


def sample_architecture(rng_seed: int, input_dim: int, output_dim=2,
                        dropout_rate=DEFAULT_DROPOUT) -> ArchSpec:
    """Uniform depth in 1..4, each width uniform in 16..512."""
    if input_dim < 1:
        raise ValueError("input_dim must be >= 1")
    rng = np.random.default_rng(int(rng_seed))
    depth = int(rng.integers(MIN_LAYERS, MAX_LAYERS + 1))
    widths = rng.integers(MIN_WIDTH, MAX_WIDTH + 1, size=depth)
    return ArchSpec(tuple(int(w) for w in widths), input_dim, output_dim, dropout_rate)


def init_network(arch: ArchSpec, seed: int) -> Network:
    """He-normal weights (variance 2/fan_in), zero biases."""
    rng = np.random.default_rng(int(seed))
    dims = arch.layer_dims
    ws = [rng.standard_normal((a, b)) * math.sqrt(2.0 / a) for a, b in zip(dims[:-1], dims[1:])]
    bs = [np.zeros(b) for b in dims[1:]]
    return Network(arch, tuple(ws), tuple(bs), int(seed))


def softmax(logits):
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _as_rng(dropout):
    if dropout is None or isinstance(dropout, np.random.Generator):
        return dropout
    if isinstance(dropout, (tuple, list)):
        return np.random.default_rng([int(k) for k in dropout])
    return np.random.default_rng(int(dropout))


def _check_batch(net, x):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != net.arch.input_dim:
        raise ValueError(f"batch has shape {x.shape}, network expects "
                         f"{net.arch.input_dim} input columns")
    if not np.all(np.isfinite(x)):
        raise ValueError("batch contains non-finite values")
    return x


def _forward_cache(net, x, rng):
    rate = net.arch.dropout_rate
    pre, acts, masks = [], [x], []
    h = x
    last = len(net.weights) - 1
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        z = h @ w + b
        if i == last:
            return softmax(z), (pre, acts, masks)
        pre.append(z)
        h = np.maximum(z, 0.0)
        if rng is not None and rate > 0.0:
            m = (rng.random(h.shape) >= rate) / (1.0 - rate)
            h = h * m
        else:
            m = None
        masks.append(m)
        acts.append(h)


def forward(net: Network, batch, dropout=None) -> np.ndarray:
    """Class probabilities for each row of ``batch``.

    ``dropout`` is None (disabled) or a seed / seed tuple / Generator enabling
    inverted dropout after every hidden activation.
    """
    x = _check_batch(net, batch)
    probs, _ = _forward_cache(net, x, _as_rng(dropout))
    return probs


def hidden_activations(net: Network, batch, dropout=None) -> np.ndarray:
    """Output of the last hidden layer (after dropout when enabled)."""
    x = _check_batch(net, batch)
    _, (_, acts, _) = _forward_cache(net, x, _as_rng(dropout))
    return acts[-1]


def weighted_cross_entropy(probs, labels, weights: ClassWeights) -> float:
    """-(1/n) sum_i w[y_i] log(max(p_i[y_i], 1e-12))."""
    p = np.asarray(probs, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    if p.ndim != 2 or p.shape[0] != y.shape[0]:
        raise ValueError(f"probs {p.shape} and labels {y.shape} lengths differ")
    w = weights.as_array(p.shape[1])[y]
    picked = p[np.arange(y.size), y]
    return float(-np.mean(w * np.log(np.maximum(picked, EPS))))


def loss_and_grads(net: Network, x, y, weights: ClassWeights, dropout=None):
    """Weighted cross-entropy and its gradients, ordered like ``net.params``.

    The gradient ignores the probability floor used by the loss value.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    probs, (pre, acts, masks) = _forward_cache(net, x, _as_rng(dropout))
    n = y.size
    w = weights.as_array(probs.shape[1])[y]
    loss = float(-np.mean(w * np.log(np.maximum(probs[np.arange(n), y], EPS))))
    delta = probs.copy()
    delta[np.arange(n), y] -= 1.0
    delta *= (w / n)[:, None]
    grads = [None] * (2 * len(net.weights))
    for i in range(len(net.weights) - 1, -1, -1):
        grads[2 * i] = acts[i].T @ delta
        grads[2 * i + 1] = delta.sum(axis=0)
        if i == 0:
            break
        delta = delta @ net.weights[i].T
        if masks[i - 1] is not None:
            delta = delta * masks[i - 1]
        delta = delta * (pre[i - 1] > 0)
    return loss, grads


class _Adam:
    def __init__(self, params, cfg):
        self.cfg = cfg
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, params, grads):
        c = self.cfg
        self.t += 1
        bc1 = 1.0 - c.adam_beta1 ** self.t
        bc2 = 1.0 - c.adam_beta2 ** self.t
        lr = c.learning_rate / bc1
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= c.adam_beta1
            m += (1.0 - c.adam_beta1) * g
            g *= g
            v *= c.adam_beta2
            v += (1.0 - c.adam_beta2) * g
            # g is scratch from here on
            np.multiply(v, 1.0 / bc2, out=g)
            np.sqrt(g, out=g)
            g += c.adam_epsilon
            np.divide(m, g, out=g)
            g *= lr
            p -= g


class _SGD:
    def __init__(self, params, cfg):
        self.lr = cfg.learning_rate

    def step(self, params, grads):
        for p, g in zip(params, grads):
            p -= self.lr * g


def train(net: Network, train_ds: Dataset, cfg: TrainConfig,
          on_batch: Optional[Callable[[int, int, float], None]] = None) -> Network:
    """Mini-batch minimisation of class-weighted cross-entropy with dropout on.

    ``on_batch(epoch, batch, loss)`` is called after every step with the
    pre-step batch loss.
    """
    if len(train_ds) == 0:
        raise TrainingError("cannot train on an empty dataset")
    if train_ds.n_features != net.arch.input_dim:
        raise ValueError(f"dataset has {train_ds.n_features} features, network expects "
                         f"{net.arch.input_dim}")
    weights = cfg.class_weights or class_weights(train_ds.labels, net.arch.output_dim)
    fit_ds, val_ds = train_ds, None
    if cfg.early_stop_patience is not None:
        split = stratified_split(train_ds, cfg.validation_fraction, cfg.shuffle_seed)
        fit_ds, val_ds = split.train, split.test
    x, y = fit_ds.features, fit_ds.labels
    n = y.size

    params = [p.copy() for p in net.params]
    opt = (_Adam if cfg.optimizer == "adam" else _SGD)(params, cfg)
    shuffle_rng = np.random.default_rng(int(cfg.shuffle_seed))
    drop_rng = np.random.default_rng(int(cfg.dropout_seed))
    current = net
    best, best_val, stale = None, math.inf, 0
    for epoch in range(cfg.epochs):
        order = shuffle_rng.permutation(n)
        for bi, start in enumerate(range(0, n, cfg.batch_size)):
            rows = order[start:start + cfg.batch_size]
            loss, grads = loss_and_grads(current, x[rows], y[rows], weights, drop_rng)
            if not math.isfinite(loss):
                raise TrainingError(f"non-finite loss at epoch {epoch}, batch {bi}")
            if on_batch is not None:
                on_batch(epoch, bi, loss)
            opt.step(params, grads)
            current = _unchecked(net, params)
        if val_ds is not None:
            val = weighted_cross_entropy(forward(current, val_ds.features), val_ds.labels, weights)
            if val < best_val:
                best_val, best, stale = val, [p.copy() for p in params], 0
            else:
                stale += 1
                if stale >= cfg.early_stop_patience:
                    break
    final = best if best is not None else params
    return net.with_params([p.copy() for p in final])


def _unchecked(net, params):
    # skip validation in the inner loop; params are views of optimizer state
    obj = object.__new__(Network)
    object.__setattr__(obj, "arch", net.arch)
    object.__setattr__(obj, "weights", tuple(params[0::2]))
    object.__setattr__(obj, "biases", tuple(params[1::2]))
    object.__setattr__(obj, "init_seed", net.init_seed)
    return obj


def _encode(a):
    a = np.asarray(a, dtype=np.float64)
    return {"shape": list(a.shape), "data": [float(v).hex() for v in a.ravel(order="C")]}


def _decode(d):
    return np.array([float.fromhex(v) for v in d["data"]], dtype=np.float64).reshape(d["shape"])


def network_to_dict(net: Network) -> dict:
    return {"arch": net.arch.to_dict(), "init_seed": net.init_seed,
            "layers": [{"weight": _encode(w), "bias": _encode(b)}
                       for w, b in zip(net.weights, net.biases)]}


def network_from_dict(d) -> Network:
    arch = ArchSpec.from_dict(d["arch"])
    layers = d["layers"]
    return Network(arch, tuple(_decode(l["weight"]) for l in layers),
                   tuple(_decode(l["bias"]) for l in layers), int(d.get("init_seed", 0)))


def save_network(net: Network, path):
    Path(path).write_text(json.dumps(network_to_dict(net), indent=1))


def load_network(path) -> Network:
    return network_from_dict(json.loads(Path(path).read_text()))
