"""Small dense-network engine: MLP forward/backward and momentum SGD in float64.

Weights follow the ``out x in`` convention, so a layer computes
``z = a @ W.T + b``. The final layer is linear and ``forward`` applies a
max-shifted softmax on top of it.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ConfigError, NumericalError

ACTIVATIONS = ("relu", "tanh")


@dataclass(frozen=True)
class LayerSpec:
    widths: tuple[int, ...]
    activation: str = "relu"

    def __post_init__(self):
        if len(self.widths) < 2:
            raise ConfigError("layer spec needs at least input and output widths")
        if any(int(w) < 1 for w in self.widths):
            raise ConfigError(f"layer widths must be positive, got {self.widths}")
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"unknown activation {self.activation!r}")

    @property
    def num_layers(self) -> int:
        return len(self.widths) - 1

    @property
    def shapes(self) -> list[tuple[int, int]]:
        return [(self.widths[i + 1], self.widths[i]) for i in range(self.num_layers)]

    @property
    def num_params(self) -> int:
        return sum(o * i + o for o, i in self.shapes)


@dataclass(frozen=True, eq=False)
class ModelParams:
    """Layer-structured parameters of an MLP classifier.

    Instances are treated as immutable values: every operation returns new
    arrays. Arithmetic (``+``, ``-``, scalar ``*``) is elementwise and only
    defined between models sharing a ``LayerSpec``.
    """

    spec: LayerSpec
    weights: tuple[np.ndarray, ...]
    biases: tuple[np.ndarray, ...]

    def __post_init__(self):
        if len(self.weights) != self.spec.num_layers or len(self.biases) != self.spec.num_layers:
            raise ConfigError("number of layers does not match layer spec")
        for idx, ((o, i), w, b) in enumerate(zip(self.spec.shapes, self.weights, self.biases)):
            if w.shape != (o, i) or b.shape != (o,):
                raise ConfigError(
                    f"layer {idx}: expected weight {(o, i)} / bias {(o,)}, got {w.shape} / {b.shape}"
                )

    @property
    def layers(self) -> list[tuple[np.ndarray, np.ndarray]]:
        return list(zip(self.weights, self.biases))

    def arrays(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def map(self, fn) -> ModelParams:
        return ModelParams(
            self.spec,
            tuple(fn(w) for w in self.weights),
            tuple(fn(b) for b in self.biases),
        )

    def zip_map(self, other: ModelParams, fn) -> ModelParams:
        _check_same_spec(self, other)
        return ModelParams(
            self.spec,
            tuple(fn(a, b) for a, b in zip(self.weights, other.weights)),
            tuple(fn(a, b) for a, b in zip(self.biases, other.biases)),
        )

    def __add__(self, other: ModelParams) -> ModelParams:
        return self.zip_map(other, np.add)

    def __sub__(self, other: ModelParams) -> ModelParams:
        return self.zip_map(other, np.subtract)

    def __mul__(self, scalar: float) -> ModelParams:
        return self.map(lambda a: a * float(scalar))

    __rmul__ = __mul__

    def to_vector(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays()])

    @classmethod
    def from_vector(cls, spec: LayerSpec, vec: np.ndarray) -> ModelParams:
        vec = np.asarray(vec, dtype=np.float64)
        if vec.shape != (spec.num_params,):
            raise ConfigError(f"vector length {vec.shape} does not match {spec.num_params} params")
        weights, biases, pos = [], [], 0
        for o, i in spec.shapes:
            weights.append(vec[pos : pos + o * i].reshape(o, i).copy())
            pos += o * i
            biases.append(vec[pos : pos + o].copy())
            pos += o
        return cls(spec, tuple(weights), tuple(biases))

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(a)) for a in self.arrays())

    def sq_norm(self) -> float:
        return float(sum(np.sum(a * a) for a in self.arrays()))

    def equals(self, other: ModelParams) -> bool:
        return self.spec == other.spec and all(
            np.array_equal(a, b) for a, b in zip(self.arrays(), other.arrays())
        )


def _check_same_spec(a: ModelParams, b: ModelParams) -> None:
    if a.spec != b.spec:
        raise ConfigError(f"layer spec mismatch: {a.spec} vs {b.spec}")


def mlp_spec(input_dim: int, num_classes: int, hidden: Sequence[int] = (64, 64),
             activation: str = "relu") -> LayerSpec:
    return LayerSpec((int(input_dim), *map(int, hidden), int(num_classes)), activation)


def init_model(spec: LayerSpec, rng: np.random.Generator) -> ModelParams:
    """Glorot-uniform weights, zero biases."""
    weights, biases = [], []
    for o, i in spec.shapes:
        bound = np.sqrt(6.0 / (i + o))
        weights.append(rng.uniform(-bound, bound, size=(o, i)))
        biases.append(np.zeros(o))
    return ModelParams(spec, tuple(weights), tuple(biases))


def zeros_like(model: ModelParams) -> ModelParams:
    return model.map(np.zeros_like)


def _activate(z, kind):
    if kind == "relu":
        return np.maximum(z, 0.0)
    return np.tanh(z)


def _activation_grad(z, a, kind):
    if kind == "relu":
        return (z > 0).astype(np.float64)
    return 1.0 - a * a


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def _as_batch(model: ModelParams, batch) -> np.ndarray:
    x = np.asarray(batch, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != model.spec.widths[0]:
        raise ConfigError(
            f"batch shape {x.shape} incompatible with input width {model.spec.widths[0]}"
        )
    return x


def _forward_cache(model: ModelParams, x: np.ndarray):
    acts = [x]
    pre = []
    a = x
    last = model.spec.num_layers - 1
    for idx, (w, b) in enumerate(model.layers):
        with np.errstate(over="ignore", invalid="ignore"):
            z = a @ w.T + b
        if not np.all(np.isfinite(z)):
            raise NumericalError("non-finite pre-activation", layer=idx)
        pre.append(z)
        if idx < last:
            a = _activate(z, model.spec.activation)
            acts.append(a)
    return pre, acts


def logits(model: ModelParams, batch) -> np.ndarray:
    x = _as_batch(model, batch)
    pre, _ = _forward_cache(model, x)
    return pre[-1]


def forward(model: ModelParams, batch) -> np.ndarray:
    """Class-probability rows for ``batch`` (shape ``[n, C]``)."""
    return softmax(logits(model, batch))


def predict(model: ModelParams, batch) -> np.ndarray:
    # argmax returns the lowest index on ties
    return np.argmax(logits(model, batch), axis=1)


def backward(model: ModelParams, batch, grad_logits: np.ndarray) -> ModelParams:
    """Gradient of a loss w.r.t. every parameter, given its gradient at the logits.

    Any batch-mean reduction must already be folded into ``grad_logits``.
    """
    x = _as_batch(model, batch)
    pre, acts = _forward_cache(model, x)
    return _backprop(model, pre, acts, grad_logits)


def loss_and_grad(model: ModelParams, batch, loss_fn) -> tuple[float, ModelParams]:
    """One forward pass plus backprop; ``loss_fn(probs) -> (value, grad_logits)``."""
    x = _as_batch(model, batch)
    pre, acts = _forward_cache(model, x)
    value, g = loss_fn(softmax(pre[-1]))
    return value, _backprop(model, pre, acts, g)


def _backprop(model, pre, acts, grad_logits):
    g = np.asarray(grad_logits, dtype=np.float64)
    if g.shape != pre[-1].shape:
        raise ConfigError(f"logit gradient shape {g.shape} does not match batch/output")
    n_layers = model.spec.num_layers
    gw = [None] * n_layers
    gb = [None] * n_layers
    delta = g
    for idx in range(n_layers - 1, -1, -1):
        gw[idx] = delta.T @ acts[idx]
        gb[idx] = delta.sum(axis=0)
        if not (np.all(np.isfinite(gw[idx])) and np.all(np.isfinite(gb[idx]))):
            raise NumericalError("non-finite gradient", layer=idx)
        if idx > 0:
            delta = (delta @ model.weights[idx]) * _activation_grad(
                pre[idx - 1], acts[idx], model.spec.activation
            )
    return ModelParams(model.spec, tuple(gw), tuple(gb))


@dataclass(frozen=True, eq=False)
class OptimizerState:
    learning_rate: float
    momentum: float = 0.0
    buffers: ModelParams | None = None

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ConfigError("learning rate must be nonnegative")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError("momentum must lie in [0, 1)")


def sgd_step(model: ModelParams, gradient: ModelParams,
             state: OptimizerState) -> tuple[ModelParams, OptimizerState]:
    """buffer <- momentum * buffer + grad; params <- params - lr * buffer."""
    _check_same_spec(model, gradient)
    if not gradient.is_finite():
        raise NumericalError("non-finite gradient passed to sgd_step")
    if state.buffers is None:
        buf = gradient.map(np.copy)
    else:
        _check_same_spec(model, state.buffers)
        buf = state.buffers.zip_map(gradient, lambda b, g: state.momentum * b + g)
    new_model = model.zip_map(buf, lambda p, b: p - state.learning_rate * b)
    if not new_model.is_finite():
        raise NumericalError("parameters became non-finite after sgd_step")
    return new_model, OptimizerState(state.learning_rate, state.momentum, buf)
