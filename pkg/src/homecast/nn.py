"""Dense feed-forward networks with hand-written backpropagation.

Weights are stored as ``(output_size, input_size)`` matrices and inputs are
row-major batches, so a layer computes ``z = a @ W.T + b``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

RELU = "relu"
SIGMOID = "sigmoid"
MSE = "mse"
CCE = "categorical_crossentropy"
SGD = "sgd"
RMSPROP = "rmsprop"

CCE_EPS = 1e-12


class NumericalError(RuntimeError):
    """Training produced a non-finite loss."""


@dataclass(frozen=True)
class LayerSpec:
    input_size: int
    output_size: int
    activation: str
    dropout: float = 0.0

    def __post_init__(self):
        if self.input_size < 1 or self.output_size < 1:
            raise ValueError("layer sizes must be >= 1")
        if self.activation not in (RELU, SIGMOID):
            raise ValueError(f"unknown activation {self.activation!r}")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout rate must lie in [0, 1)")


def _stack(widths: Sequence[int], out_width: int, dropout: float) -> list[LayerSpec]:
    dims = list(widths) + [out_width]
    layers = [LayerSpec(dims[i], dims[i + 1], RELU, dropout) for i in range(len(dims) - 2)]
    layers.append(LayerSpec(dims[-2], dims[-1], SIGMOID, 0.0))
    return layers


def dnnr_spec(dropout: float = 0.30) -> list[LayerSpec]:
    """Regression net: 10-5-20-5-5 ReLU with dropout, then one sigmoid output."""
    return _stack([10, 5, 20, 5, 5], 1, dropout)


def dnnc_spec(dropout: float = 0.20) -> list[LayerSpec]:
    """Classification net: same trunk, two sigmoid outputs (not-home, home)."""
    return _stack([10, 5, 20, 5, 5], 2, dropout)


def with_dropout(layers: Sequence[LayerSpec], rate: float) -> list[LayerSpec]:
    return [replace(l, dropout=rate) if l.activation == RELU else l for l in layers]


def n_parameters(layers: Sequence[LayerSpec]) -> int:
    return sum(l.input_size * l.output_size + l.output_size for l in layers)


@dataclass(frozen=True)
class MlpModel:
    layers: tuple[LayerSpec, ...]
    weights: tuple[np.ndarray, ...]
    biases: tuple[np.ndarray, ...]
    loss: str = MSE
    trained: bool = False
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        for a, b in zip(self.layers, self.layers[1:]):
            if a.output_size != b.input_size:
                raise ValueError("consecutive layers are not dimension-compatible")
        for l, W, b in zip(self.layers, self.weights, self.biases):
            if W.shape != (l.output_size, l.input_size) or b.shape != (l.output_size,):
                raise ValueError("parameter shapes do not match layer specs")

    @property
    def params(self) -> list[np.ndarray]:
        out = []
        for W, b in zip(self.weights, self.biases):
            out += [W, b]
        return out

    def with_params(self, params: Sequence[np.ndarray], **kw) -> "MlpModel":
        return replace(self, weights=tuple(params[0::2]), biases=tuple(params[1::2]), **kw)

    def to_dict(self) -> dict:
        return {
            "loss": self.loss,
            "trained": self.trained,
            "meta": self.meta,
            "layers": [
                {
                    "input_size": l.input_size,
                    "output_size": l.output_size,
                    "activation": l.activation,
                    "dropout": l.dropout,
                    "weights": W.tolist(),
                    "bias": b.tolist(),
                }
                for l, W, b in zip(self.layers, self.weights, self.biases)
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MlpModel":
        layers, Ws, bs = [], [], []
        for l in d["layers"]:
            layers.append(LayerSpec(l["input_size"], l["output_size"], l["activation"], l["dropout"]))
            Ws.append(np.array(l["weights"], dtype=float).reshape(l["output_size"], l["input_size"]))
            bs.append(np.array(l["bias"], dtype=float))
        return cls(tuple(layers), tuple(Ws), tuple(bs), d["loss"], d["trained"], d.get("meta", {}))


def init_model(layers: Sequence[LayerSpec], loss: str = MSE, seed: int | np.random.Generator = 0) -> MlpModel:
    """Glorot-uniform weights, zero biases."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    Ws, bs = [], []
    for l in layers:
        limit = np.sqrt(6.0 / (l.input_size + l.output_size))
        Ws.append(rng.uniform(-limit, limit, size=(l.output_size, l.input_size)))
        bs.append(np.zeros(l.output_size))
    return MlpModel(tuple(layers), tuple(Ws), tuple(bs), loss)


def _sigmoid(z):
    # split by sign to avoid overflow in exp
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


@dataclass
class ForwardCache:
    inputs: list[np.ndarray]
    pre: list[np.ndarray]
    masks: list[np.ndarray | None]
    output: np.ndarray


def forward(model: MlpModel, X: np.ndarray, rng: np.random.Generator | None = None) -> ForwardCache:
    """Run the network on a batch.

    With ``rng`` given, the pass is a training pass: each layer with a
    nonzero dropout rate zeroes units with that probability and rescales the
    survivors by ``1 / (1 - rate)``. Without it, no dropout is applied.
    """
    a = np.atleast_2d(np.asarray(X, dtype=float))
    if a.shape[1] != model.layers[0].input_size:
        raise ValueError(f"expected {model.layers[0].input_size} inputs, got {a.shape[1]}")
    inputs, pre, masks = [], [], []
    for l, W, b in zip(model.layers, model.weights, model.biases):
        inputs.append(a)
        z = a @ W.T + b
        pre.append(z)
        a = np.maximum(z, 0.0) if l.activation == RELU else _sigmoid(z)
        mask = None
        if rng is not None and l.dropout > 0.0:
            mask = (rng.random(a.shape) >= l.dropout) / (1.0 - l.dropout)
            a = a * mask
        masks.append(mask)
    return ForwardCache(inputs, pre, masks, a)


def predict(model: MlpModel, X: np.ndarray) -> np.ndarray:
    return forward(model, X).output


def loss_value(kind: str, pred: np.ndarray, target: np.ndarray) -> float:
    """Batch-mean loss.

    MSE averages squared error over outputs. Categorical cross-entropy first
    rescales each prediction row to sum to one.
    """
    pred = np.atleast_2d(pred)
    target = np.atleast_2d(target)
    if kind == MSE:
        return float(np.mean((pred - target) ** 2))
    if kind == CCE:
        q = pred / pred.sum(axis=1, keepdims=True)
        return float(np.mean(-np.sum(target * np.log(q + CCE_EPS), axis=1)))
    raise ValueError(f"unknown loss {kind!r}")


def _loss_grad(kind: str, pred: np.ndarray, target: np.ndarray) -> np.ndarray:
    B, K = pred.shape
    if kind == MSE:
        return 2.0 * (pred - target) / (B * K)
    s = pred.sum(axis=1, keepdims=True)
    q = pred / s
    g = -target / (q + CCE_EPS)
    # through the row normalization q = p / sum(p)
    return (g / s - np.sum(g * pred, axis=1, keepdims=True) / s**2) / B


def backward(model: MlpModel, cache: ForwardCache, target: np.ndarray) -> list[np.ndarray]:
    """Gradients of the batch loss, ordered like ``model.params``.

    Uses the dropout masks recorded in ``cache``.
    """
    target = np.atleast_2d(np.asarray(target, dtype=float))
    if target.shape != cache.output.shape:
        raise ValueError(f"target shape {target.shape} != output shape {cache.output.shape}")
    delta = _loss_grad(model.loss, cache.output, target)
    grads: list[np.ndarray] = []
    for i in reversed(range(len(model.layers))):
        l = model.layers[i]
        if cache.masks[i] is not None:
            delta = delta * cache.masks[i]
        z = cache.pre[i]
        if l.activation == RELU:
            delta = delta * (z > 0)
        else:
            s = _sigmoid(z)
            delta = delta * s * (1.0 - s)
        grads.append(delta.sum(axis=0))
        grads.append(delta.T @ cache.inputs[i])
        delta = delta @ model.weights[i]
    grads.reverse()
    # reversal leaves (dW, db) pairs in parameter order
    return grads


def sgd_step(params: Sequence[np.ndarray], grads: Sequence[np.ndarray], lr: float) -> list[np.ndarray]:
    return [p - lr * g for p, g in zip(params, grads)]


@dataclass
class OptimizerState:
    kind: str = SGD
    lr: float = 0.01
    rho: float = 0.9
    eps: float = 1e-8
    accum: list[np.ndarray] | None = None

    @classmethod
    def sgd(cls, lr: float = 0.01) -> "OptimizerState":
        return cls(SGD, lr)

    @classmethod
    def rmsprop(cls, lr: float = 0.001, rho: float = 0.9, eps: float = 1e-8) -> "OptimizerState":
        return cls(RMSPROP, lr, rho, eps)

    def step(self, params, grads):
        if self.kind == SGD:
            return self, sgd_step(params, grads, self.lr)
        if self.kind == RMSPROP:
            return rmsprop_step(self, params, grads)
        raise ValueError(f"unknown optimizer {self.kind!r}")


def rmsprop_step(state: OptimizerState, params: Sequence[np.ndarray],
                 grads: Sequence[np.ndarray]) -> tuple[OptimizerState, list[np.ndarray]]:
    """``s <- rho s + (1 - rho) g^2``; ``p <- p - lr g / (sqrt(s) + eps)``."""
    accum = state.accum if state.accum is not None else [np.zeros_like(p) for p in params]
    new_accum = [state.rho * s + (1.0 - state.rho) * g * g for s, g in zip(accum, grads)]
    new_params = [p - state.lr * g / (np.sqrt(s) + state.eps)
                  for p, g, s in zip(params, grads, new_accum)]
    return replace(state, accum=new_accum), new_params


def train(layers: Sequence[LayerSpec], loss: str, optimizer: OptimizerState, X: np.ndarray,
          Y: np.ndarray, epochs: int = 50, batch_size: int = 32, seed: int = 0) -> MlpModel:
    """Mini-batch training; one generator drives init, shuffling and dropout."""
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    if Y.ndim == 1:
        Y = Y[:, None]
    if X.shape[0] == 0:
        raise ValueError("no training data")
    if X.shape[0] != Y.shape[0]:
        raise ValueError("features and targets differ in length")
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    rng = np.random.default_rng(seed)
    model = init_model(layers, loss, rng)
    if Y.shape[1] != model.layers[-1].output_size:
        raise ValueError("target width does not match the output layer")
    params = model.params
    state = replace(optimizer, accum=None)
    history = []
    n = X.shape[0]
    for epoch in range(epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, batch_size):
            idx = order[start:start + batch_size]
            current = model.with_params(params)
            cache = forward(current, X[idx], rng)
            batch_loss = loss_value(loss, cache.output, Y[idx])
            if not np.isfinite(batch_loss):
                raise NumericalError(f"non-finite loss at epoch {epoch}, batch starting {start}")
            total += batch_loss * len(idx)
            state, params = state.step(params, backward(current, cache, Y[idx]))
        history.append(total / n)
    meta = {
        "optimizer": state.kind,
        "lr": state.lr,
        "rho": state.rho,
        "eps": state.eps,
        "epochs": epochs,
        "batch_size": batch_size,
        "seed": seed,
        "loss_history": history,
    }
    return model.with_params(params, trained=epochs > 0, meta=meta)
