"""Minimal feedforward network: forward pass, losses, backprop, trainers.

Bias-free fully connected layers with rectifier hidden activations.  The
forward pass exposes every intermediate activation because the curvature
module consumes them.  Training is deterministic given a seed and records
the initialization, which later serves as a data-independent prior center.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from pbcert.rng import rng_for

LOSS_KINDS = ("zero_one", "categorical", "mse")


class ShapeMismatchError(ValueError):
    pass


class DivergenceError(RuntimeError):
    pass


@dataclass(frozen=True)
class NetSpec:
    """Layer widths [d_in, hidden..., d_out]; rectifier hidden layers and a
    linear output layer (softmax is applied by the categorical loss)."""

    widths: tuple

    def __post_init__(self):
        widths = tuple(int(w) for w in self.widths)
        if len(widths) < 3:
            raise ValueError("need at least one hidden layer")
        if any(w <= 0 for w in widths):
            raise ValueError("widths must be positive")
        object.__setattr__(self, "widths", widths)

    @property
    def n_layers(self) -> int:
        return len(self.widths) - 1

    @property
    def layer_shapes(self) -> list:
        return [(self.widths[i + 1], self.widths[i]) for i in range(self.n_layers)]

    @property
    def n_params(self) -> int:
        return sum(r * c for r, c in self.layer_shapes)


class ParamIndex:
    """Maps the flat parameter vector to per-layer matrices and per-neuron
    slices.  Layout is neuron-major: layer 0 neuron 0 row first."""

    def __init__(self, spec: NetSpec):
        self.spec = spec
        self._layer_offsets = []
        offset = 0
        for rows, cols in spec.layer_shapes:
            self._layer_offsets.append(offset)
            offset += rows * cols
        self.n_params = offset

    def layer_slice(self, layer: int) -> slice:
        rows, cols = self.spec.layer_shapes[layer]
        start = self._layer_offsets[layer]
        return slice(start, start + rows * cols)

    def neuron_slice(self, layer: int, neuron: int) -> slice:
        rows, cols = self.spec.layer_shapes[layer]
        if not (0 <= neuron < rows):
            raise IndexError(f"neuron {neuron} out of range for layer {layer}")
        start = self._layer_offsets[layer] + neuron * cols
        return slice(start, start + cols)

    def to_matrices(self, values: np.ndarray) -> list:
        values = np.asarray(values, dtype=np.float64)
        if values.shape != (self.n_params,):
            raise ShapeMismatchError(
                f"expected {self.n_params} parameters, got {values.shape}"
            )
        return [
            values[self.layer_slice(i)].reshape(shape)
            for i, shape in enumerate(self.spec.layer_shapes)
        ]

    def to_vector(self, matrices) -> np.ndarray:
        return np.concatenate([np.asarray(w, dtype=np.float64).ravel() for w in matrices])


@dataclass
class ForwardPass:
    """All intermediate quantities: activations[i] feeds layer i + 1."""

    activations: list   # [A_0 = X, A_1, ..., A_l]; A_l are raw outputs
    preactivations: list  # [S_1, ..., S_l]

    @property
    def outputs(self) -> np.ndarray:
        return self.activations[-1]


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def forward(spec: NetSpec, theta: np.ndarray, X: np.ndarray) -> ForwardPass:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != spec.widths[0]:
        raise ShapeMismatchError(
            f"input width {X.shape} incompatible with spec widths {spec.widths}"
        )
    weights = ParamIndex(spec).to_matrices(theta)
    activations = [X]
    preacts = []
    for i, W in enumerate(weights):
        S = activations[-1] @ W.T
        preacts.append(S)
        activations.append(relu(S) if i < len(weights) - 1 else S)
    return ForwardPass(activations, preacts)


def one_hot(y: np.ndarray, k: int) -> np.ndarray:
    y = np.asarray(y)
    if np.any(y < 0) or np.any(y >= k):
        raise ValueError(f"labels out of range [0, {k})")
    out = np.zeros((y.shape[0], k))
    out[np.arange(y.shape[0]), y] = 1.0
    return out


def loss(kind: str, outputs: np.ndarray, labels: np.ndarray) -> float:
    """Mean batch loss.  zero_one returns the 01-error (1 - accuracy)."""
    if kind not in LOSS_KINDS:
        raise ValueError(f"unknown loss kind {kind!r}")
    outputs = np.asarray(outputs, dtype=np.float64)
    k = outputs.shape[1]
    if kind == "zero_one":
        labels = np.asarray(labels)
        if np.any(labels < 0) or np.any(labels >= k):
            raise ValueError(f"labels out of range [0, {k})")
        return float(np.mean(np.argmax(outputs, axis=1) != labels))
    if kind == "categorical":
        Y = one_hot(labels, k)
        shifted = outputs - outputs.max(axis=1, keepdims=True)
        log_probs = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
        return float(-np.mean(np.sum(Y * log_probs, axis=1)))
    # mse on raw outputs against one-hot targets, averaged over classes
    Y = one_hot(labels, k)
    return float(np.mean(np.sum((outputs - Y) ** 2, axis=1) / k))


def grad(spec: NetSpec, theta: np.ndarray, X: np.ndarray, y: np.ndarray,
         kind: str = "categorical") -> np.ndarray:
    """Reverse-mode gradient of the mean batch loss with respect to theta."""
    if kind == "zero_one":
        raise ValueError("zero_one loss is not differentiable")
    if kind not in LOSS_KINDS:
        raise ValueError(f"unknown loss kind {kind!r}")
    fp = forward(spec, theta, X)
    n, k = fp.outputs.shape
    Y = one_hot(y, k)
    if kind == "categorical":
        delta = (softmax(fp.outputs) - Y) / n
    else:
        delta = 2.0 * (fp.outputs - Y) / (k * n)
    weights = ParamIndex(spec).to_matrices(theta)
    grads = [None] * len(weights)
    for i in range(len(weights) - 1, -1, -1):
        grads[i] = delta.T @ fp.activations[i]
        if i > 0:
            delta = (delta @ weights[i]) * (fp.preactivations[i - 1] > 0)
    return ParamIndex(spec).to_vector(grads)


@dataclass(frozen=True)
class TrainerConfig:
    optimizer: str = "sgd"        # "sgd" or "adam"
    lr: float = 0.01
    momentum: float = 0.9
    decay: float = 0.001          # lr_t = lr / (1 + decay * t)
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-7
    epochs: int = 10
    batch_size: int = 128
    loss: str = "categorical"
    init_gain: float = 1.0


@dataclass
class TrainRecord:
    spec: NetSpec
    config: TrainerConfig
    seed: int
    theta0: np.ndarray
    theta_star: np.ndarray
    epoch_losses: list
    final_train_error: float
    final_test_error: float = None


def init_params(spec: NetSpec, seed: int, gain: float = 1.0) -> np.ndarray:
    """Gaussian fan-in-scaled initialization, deterministic given seed."""
    rng = rng_for(seed, "init")
    mats = [
        rng.standard_normal((rows, cols)) * (gain / np.sqrt(cols))
        for rows, cols in spec.layer_shapes
    ]
    return ParamIndex(spec).to_vector(mats)


def train(spec: NetSpec, data, config: TrainerConfig, seed: int,
          test_data=None) -> TrainRecord:
    """Deterministic minibatch training; records theta0 before any update."""
    X, y = np.asarray(data.X, dtype=np.float64), np.asarray(data.y)
    theta0 = init_params(spec, seed, config.init_gain)
    theta = np.array(theta0)
    velocity = np.zeros_like(theta)
    m1 = np.zeros_like(theta)
    m2 = np.zeros_like(theta)
    shuffle_rng = rng_for(seed, "shuffle")
    n = X.shape[0]
    step = 0
    epoch_losses = []
    for _ in range(config.epochs):
        order = shuffle_rng.permutation(n)
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            g = grad(spec, theta, X[idx], y[idx], config.loss)
            step += 1
            lr = config.lr / (1.0 + config.decay * step)
            if config.optimizer == "sgd":
                velocity = config.momentum * velocity - lr * g
                theta = theta + velocity
            elif config.optimizer == "adam":
                m1 = config.adam_beta1 * m1 + (1 - config.adam_beta1) * g
                m2 = config.adam_beta2 * m2 + (1 - config.adam_beta2) * g * g
                m1_hat = m1 / (1 - config.adam_beta1 ** step)
                m2_hat = m2 / (1 - config.adam_beta2 ** step)
                theta = theta - lr * m1_hat / (np.sqrt(m2_hat) + config.adam_eps)
            else:
                raise ValueError(f"unknown optimizer {config.optimizer!r}")
        epoch_loss = loss(config.loss, forward(spec, theta, X).outputs, y)
        if not np.isfinite(epoch_loss):
            raise DivergenceError(f"loss diverged at epoch {len(epoch_losses)}")
        epoch_losses.append(epoch_loss)
    train_err = loss("zero_one", forward(spec, theta, X).outputs, y)
    test_err = None
    if test_data is not None:
        test_err = loss(
            "zero_one", forward(spec, theta, np.asarray(test_data.X)).outputs,
            np.asarray(test_data.y),
        )
    return TrainRecord(
        spec=spec, config=config, seed=seed, theta0=theta0, theta_star=theta,
        epoch_losses=epoch_losses, final_train_error=train_err,
        final_test_error=test_err,
    )
