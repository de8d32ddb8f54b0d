"""Dense feed-forward classifiers with hand-written backpropagation.

Weights are stored as ``(out_features, in_features)`` so a layer computes
``z = x @ W.T + b``.  Everything is float64.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import InvalidConfigError, InvalidInputError, TrainingFailedError

RELU = "relu"
IDENTITY = "identity"
_ACTIVATIONS = (RELU, IDENTITY)

CHECKPOINT_VERSION = 1

# Hidden-layer widths of the three 2-D toy classifiers.
TOY_ARCHITECTURES = (
    (2, 500, 500, 2),
    (2, 50, 100, 150, 2),
    (2, 20, 20, 20, 2),
)


@dataclass
class Layer:
    weight: np.ndarray
    bias: np.ndarray
    activation: str = RELU

    def __post_init__(self):
        self.weight = np.asarray(self.weight, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.weight.ndim != 2 or self.bias.shape != (self.weight.shape[0],):
            raise InvalidInputError("layer weight must be (out, in) and bias (out,)")
        if self.activation not in _ACTIVATIONS:
            raise InvalidInputError(f"unknown activation {self.activation!r}")

    @property
    def in_dim(self) -> int:
        return self.weight.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weight.shape[0]


class MlpClassifier:
    """Stack of dense layers ending in raw logits."""

    def __init__(self, layers):
        layers = list(layers)
        if not layers:
            raise InvalidInputError("a classifier needs at least one layer")
        for prev, nxt in zip(layers, layers[1:]):
            if prev.out_dim != nxt.in_dim:
                raise InvalidInputError(
                    f"layer dims do not chain: {prev.out_dim} -> {nxt.in_dim}")
        if layers[-1].activation != IDENTITY:
            raise InvalidInputError("final layer must emit raw logits (identity activation)")
        self.layers = layers

    @classmethod
    def init(cls, widths, seed=0, hidden_activation=RELU) -> "MlpClassifier":
        """Glorot-uniform weights, zero biases.

        ``widths`` lists every layer size including input and output, e.g.
        ``(2, 20, 20, 2)``.  ``seed`` may be an int, a sequence of ints or a
        ``numpy.random.Generator``.
        """
        widths = tuple(int(w) for w in widths)
        if len(widths) < 2 or min(widths) < 1:
            raise InvalidInputError(f"bad architecture {widths}")
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        layers = []
        for i, (fan_in, fan_out) in enumerate(zip(widths, widths[1:])):
            limit = math.sqrt(6.0 / (fan_in + fan_out))
            w = rng.uniform(-limit, limit, size=(fan_out, fan_in))
            act = IDENTITY if i == len(widths) - 2 else hidden_activation
            layers.append(Layer(w, np.zeros(fan_out), act))
        return cls(layers)

    @property
    def input_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def output_dim(self) -> int:
        return self.layers[-1].out_dim

    @property
    def widths(self) -> tuple:
        return (self.input_dim,) + tuple(layer.out_dim for layer in self.layers)

    @property
    def name(self) -> str:
        return "-".join(str(w) for w in self.widths)

    @property
    def n_params(self) -> int:
        return sum(layer.weight.size + layer.bias.size for layer in self.layers)

    def copy(self) -> "MlpClassifier":
        return MlpClassifier(
            [Layer(l.weight.copy(), l.bias.copy(), l.activation) for l in self.layers])

    def parameters(self) -> list:
        """Flat list ``[W0, b0, W1, b1, ...]`` of the live arrays."""
        out = []
        for layer in self.layers:
            out.extend((layer.weight, layer.bias))
        return out

    def __call__(self, batch):
        return forward(self, batch)

    def __repr__(self):
        return f"MlpClassifier({self.name})"


@dataclass
class GradientBundle:
    weights: list
    biases: list
    inputs: np.ndarray | None = None

    def flat(self) -> list:
        out = []
        for gw, gb in zip(self.weights, self.biases):
            out.extend((gw, gb))
        return out


def _as_batch(model: MlpClassifier, batch) -> np.ndarray:
    x = np.asarray(batch, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != model.input_dim:
        raise InvalidInputError(
            f"expected batch with {model.input_dim} columns, got shape {x.shape}")
    return x


def forward_cached(model: MlpClassifier, batch):
    """Forward pass returning logits and the per-layer (input, pre-activation) cache."""
    h = _as_batch(model, batch)
    cache = []
    for layer in model.layers:
        z = h @ layer.weight.T + layer.bias
        cache.append((h, z))
        h = np.maximum(z, 0.0) if layer.activation == RELU else z
    return h, cache


def forward(model: MlpClassifier, batch) -> np.ndarray:
    return forward_cached(model, batch)[0]


def backprop(model: MlpClassifier, cache, d_logits, input_grad=True,
             param_grads=True) -> GradientBundle:
    """Vector-Jacobian product of ``sum(d_logits * logits)`` through the network.

    With ``param_grads=False`` only the input gradient is formed and the
    weight/bias lists come back empty.
    """
    g = np.asarray(d_logits, dtype=np.float64)
    gws, gbs = [], []
    for layer, (h, z) in zip(reversed(model.layers), reversed(cache)):
        if layer.activation == RELU:
            g = g * (z > 0)
        if param_grads:
            gws.append(g.T @ h)
            gbs.append(g.sum(axis=0))
        if input_grad or layer is not model.layers[0]:
            g = g @ layer.weight
    return GradientBundle(gws[::-1], gbs[::-1], g if input_grad else None)


def softmax(logits) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(logits) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def _check_labels(labels, k):
    labels = np.asarray(labels)
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise InvalidInputError(f"label out of range [0, {k})")
    return labels.astype(np.int64)


def softmax_ce(logits, label) -> float:
    """Softmax cross-entropy of a single logit vector."""
    logits = np.asarray(logits, dtype=np.float64)
    label = int(_check_labels([label], logits.shape[-1])[0])
    return float(-log_softmax(logits)[label])


def softmax_ce_rows(logits, labels) -> np.ndarray:
    """Per-row softmax cross-entropy."""
    logits = np.asarray(logits, dtype=np.float64)
    labels = _check_labels(labels, logits.shape[1])
    return -log_softmax(logits)[np.arange(len(labels)), labels]


def backward(model: MlpClassifier, batch, labels, input_grad=False):
    """Mean softmax-CE loss over the batch and its gradients.

    Parameter gradients are those of the batch mean.  The input gradient row
    ``i`` is the gradient of sample ``i``'s own loss (not divided by the
    batch size), which is what per-sample scoring needs.
    """
    logits, cache = forward_cached(model, batch)
    labels = _check_labels(labels, model.output_dim)
    if len(labels) != len(logits):
        raise InvalidInputError("batch and labels disagree in length")
    n = len(labels)
    probs = softmax(logits)
    losses = -log_softmax(logits)[np.arange(n), labels]
    d = probs
    d[np.arange(n), labels] -= 1.0
    bundle = backprop(model, cache, d / n, input_grad=input_grad)
    if input_grad:
        bundle.inputs = bundle.inputs * n
    return float(losses.mean()), bundle


def mean_loss(model: MlpClassifier, batch, labels) -> float:
    return float(softmax_ce_rows(forward(model, batch), labels).mean())


# --------------------------------------------------------------------------
# training
# --------------------------------------------------------------------------

LR_SCHEDULES = ("constant", "inverse_t", "inverse_sqrt")


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 32
    total_steps: int = 2000
    lr_schedule: str = "inverse_sqrt"
    lr: float = 0.05
    early_stop_tolerance: int = 30
    seed: int = 0
    validation_fraction: float = 0.2

    def step_size(self, t: int) -> float:
        """Step size for 1-based step ``t``."""
        if self.lr_schedule == "constant":
            return self.lr
        if self.lr_schedule == "inverse_t":
            return self.lr / t
        return self.lr / math.sqrt(t)

    def validate(self, n: int | None = None):
        if self.batch_size < 1 or self.total_steps < 1 or self.early_stop_tolerance < 1:
            raise InvalidConfigError("batch_size, total_steps and tolerance must be >= 1")
        if self.lr_schedule not in LR_SCHEDULES:
            raise InvalidConfigError(f"lr_schedule must be one of {LR_SCHEDULES}")
        if not 0.0 < self.validation_fraction < 1.0:
            raise InvalidConfigError("validation_fraction must lie in (0, 1)")
        if n is not None and self.batch_size > n:
            raise InvalidConfigError(
                f"batch size {self.batch_size} exceeds the {n} available samples")


@dataclass
class TrainResult:
    model: MlpClassifier
    loss_trace: np.ndarray
    val_trace: np.ndarray = field(default_factory=lambda: np.zeros(0))
    eval_steps: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    best_step: int = -1
    steps_run: int = 0


def _xy(dataset):
    if isinstance(dataset, tuple):
        x, y = dataset
    else:
        x, y = dataset.X, dataset.y
    return np.asarray(x, dtype=np.float64), np.asarray(y, dtype=np.int64)


def _sgd_loop(model, x, y, config, callback=None, every=None):
    """Run Algorithm-1 style mini-batch SGD in place on ``model``.

    ``callback(step, model)`` is invoked after step 0 (before any update) and
    after every ``every``-th step; returning True stops the loop.
    """
    n = len(x)
    rng = np.random.default_rng([config.seed, 1])
    params = model.parameters()
    trace = []
    if callback is not None and callback(0, model):
        return np.asarray(trace), 0
    step = 0
    for step in range(1, config.total_steps + 1):
        idx = rng.choice(n, size=config.batch_size, replace=False)
        loss, grads = backward(model, x[idx], y[idx])
        if not np.isfinite(loss):
            raise TrainingFailedError(f"non-finite training loss at step {step}")
        trace.append(loss)
        eta = config.step_size(step)
        for p, g in zip(params, grads.flat()):
            p -= eta * g
        if callback is not None and every and step % every == 0 and callback(step, model):
            break
    return np.asarray(trace), step


def sgd_train(model: MlpClassifier, dataset, config: TrainConfig, callback=None,
              every=None) -> TrainResult:
    """``config.total_steps`` steps of mini-batch SGD on a copy of ``model``.

    Each step draws ``batch_size`` distinct samples; draws are independent
    across steps.
    """
    x, y = _xy(dataset)
    if len(x) == 0:
        raise InvalidConfigError("empty dataset")
    config.validate(len(x))
    model = model.copy()
    trace, steps = _sgd_loop(model, x, y, config, callback, every)
    return TrainResult(model, trace, steps_run=steps)


def validation_split(n: int, config: TrainConfig):
    """Seeded (train_idx, val_idx) partition of ``range(n)``."""
    perm = np.random.default_rng([config.seed, 0]).permutation(n)
    n_val = int(round(config.validation_fraction * n))
    if n_val < 1 or n - n_val < config.batch_size:
        raise InvalidConfigError(
            f"validation split of {n} samples leaves {n_val} validation and "
            f"{n - n_val} training samples (batch {config.batch_size})")
    return np.sort(perm[n_val:]), np.sort(perm[:n_val])


def early_stop_train(model: MlpClassifier, dataset, config: TrainConfig) -> TrainResult:
    """SGD with a held-out validation split; returns the best-validation checkpoint.

    Validation loss is evaluated before training and then every
    ``ceil(n_train / batch_size)`` steps.  Training stops once
    ``early_stop_tolerance`` consecutive evaluations fail to improve on the
    best value seen.
    """
    x, y = _xy(dataset)
    config.validate()
    tr, va = validation_split(len(x), config)
    xt, yt, xv, yv = x[tr], y[tr], x[va], y[va]
    every = math.ceil(len(tr) / config.batch_size)

    state = {"best": np.inf, "best_model": None, "best_step": 0, "bad": 0}
    val_trace, eval_steps = [], []

    def on_eval(step, m):
        v = mean_loss(m, xv, yv)
        val_trace.append(v)
        eval_steps.append(step)
        if v < state["best"]:
            state.update(best=v, best_model=m.copy(), best_step=step, bad=0)
        else:
            state["bad"] += 1
        return state["bad"] >= config.early_stop_tolerance

    work = model.copy()
    trace, steps = _sgd_loop(work, xt, yt, config, on_eval, every)
    best = state["best_model"] if state["best_model"] is not None else work
    return TrainResult(best, trace, np.asarray(val_trace), np.asarray(eval_steps),
                       state["best_step"], steps)


# --------------------------------------------------------------------------
# checkpoints
# --------------------------------------------------------------------------


def save_model(model: MlpClassifier, path) -> None:
    arrays = {
        "format_version": np.array(CHECKPOINT_VERSION),
        "widths": np.array(model.widths, dtype=np.int64),
        "activations": np.array([l.activation for l in model.layers]),
    }
    for i, layer in enumerate(model.layers):
        arrays[f"W{i}"] = layer.weight
        arrays[f"b{i}"] = layer.bias
    with open(Path(path), "wb") as fh:
        np.savez(fh, **arrays)


def load_model(path) -> MlpClassifier:
    with np.load(Path(path), allow_pickle=False) as data:
        version = int(data["format_version"])
        if version != CHECKPOINT_VERSION:
            raise InvalidInputError(f"unsupported checkpoint version {version}")
        acts = [str(a) for a in data["activations"]]
        layers = [Layer(data[f"W{i}"], data[f"b{i}"], a) for i, a in enumerate(acts)]
    return MlpClassifier(layers)
