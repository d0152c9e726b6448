"""Seeded training of master copies and accuracy evaluation."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .numerics import DimensionError, LabeledSample, Layer, Model, batch_loss_and_grad
from .rng import TAG_INIT, TAG_SHUFFLE, Stream, derive


class TrainingDivergedError(ArithmeticError):
    pass


@dataclass(frozen=True, eq=False)
class Dataset:
    """Samples stored as a matrix ``X`` (rows in [0, 1]) and integer labels ``y``."""

    X: np.ndarray
    y: np.ndarray
    num_classes: int
    split: str = "train"

    def __post_init__(self):
        X = np.ascontiguousarray(self.X, dtype=np.float64)
        y = np.ascontiguousarray(self.y, dtype=np.int64)
        if X.ndim != 2 or X.shape[0] == 0 or X.shape[1] == 0:
            raise ValueError(f"dataset must be a non-empty matrix, got shape {X.shape}")
        if y.shape != (X.shape[0],):
            raise DimensionError("one label per sample required")
        if np.any(y < 0) or np.any(y >= self.num_classes):
            raise ValueError(f"labels must lie in [0, {self.num_classes})")
        if not np.all(np.isfinite(X)):
            raise ValueError("dataset contains non-finite values")
        X = np.clip(X, 0.0, 1.0)
        X.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)

    @classmethod
    def from_samples(cls, samples: Sequence[LabeledSample], num_classes: int, split="train"):
        if not samples:
            raise ValueError("empty dataset")
        return cls(np.stack([s.x for s in samples]), np.array([s.y for s in samples]),
                   num_classes, split)

    @property
    def input_dim(self) -> int:
        return self.X.shape[1]

    def __len__(self) -> int:
        return self.X.shape[0]

    @property
    def samples(self) -> list[LabeledSample]:
        return [LabeledSample(self.X[i], int(self.y[i])) for i in range(len(self))]

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx, dtype=np.int64)
        return Dataset(self.X[idx], self.y[idx], self.num_classes, self.split)


@dataclass(frozen=True)
class TrainConfig:
    seed: int
    architecture: tuple[int, ...] = (64, 32, 3)
    epochs: int = 20
    batch_size: int = 32
    learning_rate: float = 0.01
    momentum: float = 0.9

    def __post_init__(self):
        object.__setattr__(self, "architecture", tuple(int(w) for w in self.architecture))
        if len(self.architecture) < 2 or min(self.architecture) < 1:
            raise ValueError("architecture needs at least input and output widths, all positive")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be positive")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must lie in [0, 1)")


def init_model(architecture: Sequence[int], seed: int) -> Model:
    """He-normal weights (std sqrt(2/fan_in)), zero biases; ReLU on hidden layers."""
    layers = []
    last = len(architecture) - 2
    for l, (nin, nout) in enumerate(zip(architecture[:-1], architecture[1:])):
        W = Stream(derive(seed, TAG_INIT, l)).normal(nout * nin).reshape(nout, nin)
        W *= math.sqrt(2.0 / nin)
        layers.append(Layer(W, np.zeros(nout), "identity" if l == last else "relu"))
    return Model(tuple(layers))


def train(data: Dataset, cfg: TrainConfig) -> Model:
    """Mini-batch SGD with momentum; the seed fixes init and every epoch's order."""
    arch = cfg.architecture
    if arch[0] != data.input_dim:
        raise DimensionError(f"architecture input {arch[0]} != data dimension {data.input_dim}")
    if arch[-1] != data.num_classes:
        raise DimensionError(f"architecture output {arch[-1]} != {data.num_classes} classes")
    model = init_model(arch, cfg.seed)
    acts = model.activations
    theta = model.flat_params.copy()
    velocity = np.zeros_like(theta)
    m = len(data)
    for epoch in range(cfg.epochs):
        order = Stream(derive(cfg.seed, TAG_SHUFFLE, epoch)).permutation(m)
        for start in range(0, m, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            current = Model.from_flat(arch, theta, acts)
            loss, grad = batch_loss_and_grad(current, data.X[idx], data.y[idx])
            if not (math.isfinite(loss) and np.all(np.isfinite(grad))):
                raise TrainingDivergedError(f"non-finite loss at epoch {epoch}, offset {start}")
            velocity = cfg.momentum * velocity - cfg.learning_rate * grad
            theta = theta + velocity
            if not np.all(np.isfinite(theta)):
                raise TrainingDivergedError(f"parameters diverged at epoch {epoch}")
    return Model.from_flat(arch, theta, acts)


def predictions(m, data: Dataset) -> np.ndarray:
    return np.array([int(np.argmax(m.forward(x))) for x in data.X], dtype=np.int64)


def evaluate_accuracy(m, data: Dataset) -> float:
    if len(data) == 0:
        raise ValueError("empty dataset")
    if m.input_dim != data.input_dim:
        raise DimensionError(f"model expects {m.input_dim} inputs, data has {data.input_dim}")
    return float(np.mean(predictions(m, data) == data.y))
