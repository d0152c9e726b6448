"""Dense ReLU classifiers: evaluation, exact gradients, finite differences."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import kernels

LOG_FLOOR = 1e-12

ACTIVATIONS = ("identity", "relu")


class DimensionError(ValueError):
    """Raised when a vector or layer does not have the expected width."""


def as_vector(x, length: int | None = None, name: str = "x") -> np.ndarray:
    """Validated contiguous float64 copy of ``x``."""
    v = np.ascontiguousarray(x, dtype=np.float64)
    if v.ndim != 1 or v.size == 0:
        raise DimensionError(f"{name} must be a non-empty 1-D vector, got shape {v.shape}")
    if length is not None and v.size != length:
        raise DimensionError(f"{name} has length {v.size}, expected {length}")
    if not np.all(np.isfinite(v)):
        raise ValueError(f"{name} contains non-finite entries")
    return v


@dataclass(frozen=True, eq=False)
class Layer:
    weights: np.ndarray  # (out, in)
    bias: np.ndarray
    activation: str = "relu"

    def __post_init__(self):
        W = np.ascontiguousarray(self.weights, dtype=np.float64)
        b = np.ascontiguousarray(self.bias, dtype=np.float64)
        if W.ndim != 2 or W.size == 0:
            raise DimensionError(f"weights must be a non-empty matrix, got shape {W.shape}")
        if b.shape != (W.shape[0],):
            raise DimensionError(f"bias length {b.shape} does not match {W.shape[0]} rows")
        if not (np.all(np.isfinite(W)) and np.all(np.isfinite(b))):
            raise ValueError("layer parameters must be finite")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        W.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, "weights", W)
        object.__setattr__(self, "bias", b)

    @property
    def fan_in(self) -> int:
        return self.weights.shape[1]

    @property
    def width(self) -> int:
        return self.weights.shape[0]


@dataclass(frozen=True, eq=False)
class Model:
    """Feedforward classifier ending in softmax.

    Parameters are packed once into a flat vector (per layer: weights
    row-major, then bias) which is what the kernels consume.
    """

    layers: tuple[Layer, ...]
    _params: np.ndarray = field(init=False, repr=False)
    _dims: np.ndarray = field(init=False, repr=False)
    _relu: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        layers = tuple(self.layers)
        if not layers:
            raise DimensionError("a model needs at least one layer")
        for prev, nxt in zip(layers, layers[1:]):
            if nxt.fan_in != prev.width:
                raise DimensionError(
                    f"layer widths do not chain: {prev.width} -> fan-in {nxt.fan_in}"
                )
        params = np.concatenate([np.concatenate([l.weights.ravel(), l.bias]) for l in layers])
        params.setflags(write=False)
        dims = np.array([layers[0].fan_in] + [l.width for l in layers], dtype=np.int32)
        relu = np.array([l.activation == "relu" for l in layers], dtype=np.uint8)
        object.__setattr__(self, "layers", layers)
        object.__setattr__(self, "_params", params)
        object.__setattr__(self, "_dims", dims)
        object.__setattr__(self, "_relu", relu)

    @property
    def input_dim(self) -> int:
        return int(self._dims[0])

    @property
    def num_classes(self) -> int:
        return int(self._dims[-1])

    @property
    def widths(self) -> list[int]:
        return [int(d) for d in self._dims]

    @property
    def flat_params(self) -> np.ndarray:
        return self._params

    @classmethod
    def from_flat(cls, widths: Sequence[int], params, activations: Sequence[str]) -> "Model":
        params = np.asarray(params, dtype=np.float64)
        layers, off = [], 0
        for nin, nout, act in zip(widths[:-1], widths[1:], activations):
            W = params[off:off + nout * nin].reshape(nout, nin)
            b = params[off + nout * nin:off + nout * nin + nout]
            off += nout * nin + nout
            layers.append(Layer(W, b, act))
        if off != params.size:
            raise DimensionError(f"{params.size} parameters given, architecture needs {off}")
        return cls(tuple(layers))

    @property
    def activations(self) -> list[str]:
        return [l.activation for l in self.layers]

    # AttackableModel surface
    def logits(self, x) -> np.ndarray:
        return logits(self, x)

    def forward(self, x) -> np.ndarray:
        return forward(self, x)

    def logits_jacobian(self, x) -> tuple[np.ndarray, np.ndarray]:
        x = as_vector(x, self.input_dim)
        return kernels.mlp_jacobian(self._params, self._dims, self._relu, x)

    def loss_gradient(self, x, y: int) -> np.ndarray:
        return input_gradient(self, x, y)


def softmax(z) -> np.ndarray:
    """Max-shifted softmax with a sequential normalizer."""
    z = np.asarray(z, dtype=np.float64)
    zmax = z[0]
    for v in z[1:]:
        if v > zmax:
            zmax = v
    e = [math.exp(v - zmax) for v in z]
    tot = 0.0
    for v in e:
        tot += v
    return np.array([v / tot for v in e])


def logits(model: Model, x) -> np.ndarray:
    x = as_vector(x, model.input_dim)
    return kernels.mlp_logits(model._params, model._dims, model._relu, x)


def forward(model: Model, x) -> np.ndarray:
    return softmax(logits(model, x))


def cross_entropy(probs, y_true: int) -> float:
    probs = np.asarray(probs, dtype=np.float64)
    if not 0 <= y_true < probs.size:
        raise IndexError(f"label {y_true} out of range for {probs.size} classes")
    return -math.log(max(float(probs[y_true]), LOG_FLOOR))


def softmax_jacobian(p: np.ndarray) -> np.ndarray:
    return np.diag(p) - np.outer(p, p)


def input_gradient(model: Model, x, y_true: int) -> np.ndarray:
    """Gradient of ``cross_entropy(forward(model, x), y_true)`` w.r.t. ``x``.

    Uses the closed form ``J_zᵀ (p - onehot)``; the log floor only guards
    the loss value.
    """
    if not 0 <= y_true < model.num_classes:
        raise IndexError(f"label {y_true} out of range")
    z, J = model.logits_jacobian(x)
    d = softmax(z)
    d[y_true] -= 1.0
    return d @ J


@dataclass(frozen=True)
class LabeledSample:
    x: np.ndarray
    y: int

    def __post_init__(self):
        x = np.clip(as_vector(self.x), 0.0, 1.0)
        x.setflags(write=False)
        object.__setattr__(self, "x", x)
        if int(self.y) < 0:
            raise ValueError("labels must be non-negative")
        object.__setattr__(self, "y", int(self.y))


@dataclass
class LayerGradient:
    weights: np.ndarray
    bias: np.ndarray


def param_gradients(model: Model, batch: Sequence[LabeledSample]) -> list[LayerGradient]:
    """Mean cross-entropy gradient over ``batch`` for every weight and bias."""
    if len(batch) == 0:
        raise ValueError("empty batch")
    X = np.stack([as_vector(s.x, model.input_dim) for s in batch])
    y = np.array([s.y for s in batch], dtype=np.int64)
    if np.any(y >= model.num_classes):
        raise IndexError("label out of range")
    _, flat = batch_loss_and_grad(model, X, y)
    return unflatten_gradient(model, flat)


def batch_loss_and_grad(model: Model, X: np.ndarray, y: np.ndarray) -> tuple[float, np.ndarray]:
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.ascontiguousarray(y, dtype=np.int64)
    return kernels.mlp_batch_grads(model._params, model._dims, model._relu, X, y)


def unflatten_gradient(model: Model, flat: np.ndarray) -> list[LayerGradient]:
    out, off = [], 0
    for layer in model.layers:
        r, c = layer.weights.shape
        out.append(LayerGradient(flat[off:off + r * c].reshape(r, c).copy(),
                                 flat[off + r * c:off + r * c + r].copy()))
        off += r * c + r
    return out


def finite_difference_input_gradient(
    f: Callable[[np.ndarray], float], x, h: float = 1e-5
) -> np.ndarray:
    """Central differences ``(f(x + h e_i) - f(x - h e_i)) / 2h``."""
    if not h > 0:
        raise ValueError("h must be positive")
    x = np.array(x, dtype=np.float64)
    g = np.empty_like(x)
    for i in range(x.size):
        xp = x.copy()
        xm = x.copy()
        xp[i] += h
        xm[i] -= h
        g[i] = (f(xp) - f(xm)) / (2.0 * h)
    return g


def min_relu_margin(model: Model, x) -> float:
    """Smallest |pre-activation| over ReLU units; FD checks need it away from 0."""
    a = as_vector(x, model.input_dim)
    best = math.inf
    for layer in model.layers:
        z = layer.weights @ a + layer.bias
        if layer.activation == "relu":
            best = min(best, float(np.min(np.abs(z))))
            a = np.maximum(z, 0.0)
        else:
            a = z
    return best


def predict(m, x) -> int:
    """argmax of the soft-label; ties go to the lowest index."""
    return int(np.argmax(m.forward(x)))


def relative_error(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = max(np.linalg.norm(a), np.linalg.norm(b), 1e-30)
    return float(np.linalg.norm(a - b) / denom)
