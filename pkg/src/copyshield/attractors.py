"""Seeded watermark-decoder attractors and the pieced (L1-normalized) model.

A user's copy is the master's soft-label plus a decoder response,
renormalized to unit L1 norm. Two decoders are provided:

* spread spectrum: ``c_j = A * (x . m_j)`` with secret unit messages ``m_j``;
* QIM: per class, ``B`` secret projections are measured against a lattice of
  spacing ``delta``; the weighted quantization error is mapped linearly onto
  ``[0, 1]`` with zero error giving 1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Union

import numpy as np

from . import kernels
from .numerics import LOG_FLOOR, DimensionError, Model, as_vector, softmax, softmax_jacobian
from .rng import TAG_QIM, TAG_SPREAD, Stream, derive

DEFAULT_GAIN = 5.0
DEFAULT_B = 16
DEFAULT_DELTA = 0.5
ZERO_NORM = 1e-12


class DegenerateSumError(ArithmeticError):
    """The master + decoder sum has (near) zero L1 norm."""


def _unit_message(seed: int, length: int, *path: int) -> np.ndarray:
    v = Stream(derive(seed, *path)).normal(length)
    return v / math.sqrt(float(np.cumsum(v * v)[-1]))


@dataclass(frozen=True, eq=False)
class SpreadSpectrumDecoder:
    seed: int = field(repr=False)
    num_classes: int
    input_dim: int
    gain: float = DEFAULT_GAIN
    messages: np.ndarray = field(init=False, repr=False)

    kind = "spread"

    def __post_init__(self):
        if self.num_classes < 1 or self.input_dim < 1:
            raise ValueError("n and l must be positive")
        if not self.gain >= 0:
            raise ValueError("gain must be non-negative")
        M = np.stack([_unit_message(self.seed, self.input_dim, TAG_SPREAD, j)
                      for j in range(self.num_classes)])
        M.setflags(write=False)
        object.__setattr__(self, "messages", M)

    @classmethod
    def from_messages(cls, messages, gain: float = DEFAULT_GAIN) -> "SpreadSpectrumDecoder":
        """Decoder with explicit message rows (no seed); used for analysis and tests."""
        M = np.array(messages, dtype=np.float64, ndmin=2)
        if not gain >= 0:
            raise ValueError("gain must be non-negative")
        dec = object.__new__(cls)
        M.setflags(write=False)
        for k, v in (("seed", None), ("num_classes", M.shape[0]), ("input_dim", M.shape[1]),
                     ("gain", float(gain)), ("messages", M)):
            object.__setattr__(dec, k, v)
        return dec

    def response(self, x) -> np.ndarray:
        x = as_vector(x, self.input_dim)
        return kernels.ss_response(self.messages, float(self.gain), x)

    def response_jacobian(self, x) -> tuple[np.ndarray, np.ndarray]:
        return self.response(x), self.gain * self.messages

    def hyperparameters(self) -> dict:
        return {"gain": float(self.gain)}


@dataclass(frozen=True, eq=False)
class QimDecoder:
    seed: int = field(repr=False)
    num_classes: int
    input_dim: int
    projections: int = DEFAULT_B
    delta: float = DEFAULT_DELTA
    alpha: tuple[float, ...] | None = None
    messages: np.ndarray = field(init=False, repr=False)  # (n*B, l), row j*B + h

    kind = "qim"

    def __post_init__(self):
        if self.num_classes < 1 or self.input_dim < 1 or self.projections < 1:
            raise ValueError("n, l and B must be positive")
        if not self.delta > 0:
            raise ValueError("delta must be positive")
        alpha = self.alpha
        if alpha is None:
            alpha = (1.0 / self.projections,) * self.projections
        alpha = tuple(float(a) for a in alpha)
        if len(alpha) != self.projections:
            raise ValueError(f"need {self.projections} weights, got {len(alpha)}")
        if any(a < 0 for a in alpha) or not sum(alpha) > 0:
            raise ValueError("weights must be non-negative with a positive sum")
        object.__setattr__(self, "alpha", alpha)
        P = np.stack([_unit_message(self.seed, self.input_dim, TAG_QIM, j, h)
                      for j in range(self.num_classes) for h in range(self.projections)])
        P.setflags(write=False)
        object.__setattr__(self, "messages", P)
        object.__setattr__(self, "_alpha", np.array(alpha))

    @classmethod
    def from_messages(cls, messages, num_classes: int, delta: float = DEFAULT_DELTA,
                      alpha=None) -> "QimDecoder":
        """Decoder with explicit ``(n*B, l)`` projection rows (no seed)."""
        P = np.array(messages, dtype=np.float64, ndmin=2)
        if num_classes < 1 or P.shape[0] % num_classes:
            raise ValueError(f"{P.shape[0]} rows do not split into {num_classes} classes")
        B = P.shape[0] // num_classes
        ref = cls(0, num_classes, P.shape[1], B, delta, alpha)
        P.setflags(write=False)
        object.__setattr__(ref, "seed", None)
        object.__setattr__(ref, "messages", P)
        return ref

    @property
    def max_error(self) -> float:
        tot = 0.0
        for a in self.alpha:
            tot += a
        return self.delta / 2.0 * tot

    def response(self, x) -> np.ndarray:
        x = as_vector(x, self.input_dim)
        e, _ = kernels.qim_response(self.messages, self._alpha, float(self.delta),
                                    self.num_classes, self.projections, x, False)
        return e

    def response_jacobian(self, x) -> tuple[np.ndarray, np.ndarray]:
        x = as_vector(x, self.input_dim)
        return kernels.qim_response(self.messages, self._alpha, float(self.delta),
                                    self.num_classes, self.projections, x, True)

    def projection_values(self, x) -> np.ndarray:
        """The ``(n, B)`` projections ``m_{j,h} . x``."""
        x = as_vector(x, self.input_dim)
        return (self.messages @ x).reshape(self.num_classes, self.projections)

    def hyperparameters(self) -> dict:
        return {"projections": self.projections, "delta": float(self.delta),
                "alpha": list(self.alpha)}


Decoder = Union[SpreadSpectrumDecoder, QimDecoder]


def gen_spread_spectrum(seed: int, n: int, ell: int, gain: float = DEFAULT_GAIN) -> SpreadSpectrumDecoder:
    return SpreadSpectrumDecoder(seed, n, ell, gain)


def gen_qim(seed: int, n: int, ell: int, projections: int = DEFAULT_B,
            delta: float = DEFAULT_DELTA, alpha=None) -> QimDecoder:
    return QimDecoder(seed, n, ell, projections, delta, alpha)


def eval_spread_spectrum(dec: SpreadSpectrumDecoder, x) -> np.ndarray:
    return dec.response(x)


def eval_qim(dec: QimDecoder, x) -> np.ndarray:
    return dec.response(x)


def quant_residual(y: float, delta: float) -> float:
    """``|y + delta/2 - round(y/delta + 1/2) * delta|``, rounding ties away from zero."""
    if not delta > 0:
        raise ValueError("delta must be positive")
    return kernels.quant_residual(float(y), float(delta))


def decoder_input_gradient(dec: Decoder, x, j: int) -> np.ndarray:
    if not 0 <= j < dec.num_classes:
        raise IndexError(f"class {j} out of range")
    return dec.response_jacobian(x)[1][j].copy()


@dataclass(frozen=True, eq=False)
class PiecedModel:
    """Master soft-label plus decoder response, normalized to unit L1 norm.

    As an attack target, its "logits" are the pieced output itself: that is
    what a white-box attacker sees when the composition is coded as a
    network.
    """

    master: Model
    decoder: Decoder

    def __post_init__(self):
        if self.decoder.num_classes != self.master.num_classes:
            raise DimensionError(
                f"decoder has {self.decoder.num_classes} classes, master has {self.master.num_classes}"
            )
        if self.decoder.input_dim != self.master.input_dim:
            raise DimensionError(
                f"decoder input length {self.decoder.input_dim} != master {self.master.input_dim}"
            )

    @property
    def num_classes(self) -> int:
        return self.master.num_classes

    @property
    def input_dim(self) -> int:
        return self.master.input_dim

    def forward(self, x) -> np.ndarray:
        return pieced_forward(self, x)

    def logits(self, x) -> np.ndarray:
        return pieced_forward(self, x)

    def logits_jacobian(self, x) -> tuple[np.ndarray, np.ndarray]:
        q, Jq, _ = _pieced_with_jacobian(self, x)
        return q, Jq

    def loss_gradient(self, x, y: int) -> np.ndarray:
        return pieced_input_gradient(self, x, y)


def piece_together(master: Model, decoder: Decoder) -> PiecedModel:
    return PiecedModel(master, decoder)


def _l1(s: np.ndarray) -> float:
    tot = 0.0
    for v in s:
        tot += abs(v)
    return tot


def pieced_forward(pm: PiecedModel, x) -> np.ndarray:
    x = as_vector(x, pm.input_dim)
    p = softmax(pm.master.logits(x))
    a = pm.decoder.response(x)
    if not np.any(a):
        # the soft-label is already a distribution; renormalizing would only move its last bits
        return p
    s = p + a
    norm = _l1(s)
    if norm < ZERO_NORM:
        raise DegenerateSumError(f"L1 norm of master + decoder is {norm:.3g}")
    return s / norm


def _pieced_with_jacobian(pm: PiecedModel, x):
    x = as_vector(x, pm.input_dim)
    z, Jz = pm.master.logits_jacobian(x)
    p = softmax(z)
    a, Ja = pm.decoder.response_jacobian(x)
    Jp = softmax_jacobian(p) @ Jz
    if not np.any(a):
        # the soft-label is already a distribution; renormalizing would only move its last bits
        return p, Jp + Ja - np.outer(p, Ja.sum(axis=0)), p
    s = p + a
    norm = _l1(s)
    if norm < ZERO_NORM:
        raise DegenerateSumError(f"L1 norm of master + decoder is {norm:.3g}")
    Js = Jp + Ja
    q = s / norm
    # d(s/N) = (dS - q * dN) / N with dN = sign(s) . dS, sign(0) = 0
    Jq = (Js - np.outer(q, np.sign(s) @ Js)) / norm
    return q, Jq, s


def pieced_input_gradient(pm: PiecedModel, x, y_true: int) -> np.ndarray:
    """Gradient of ``-log(max(q_y, 1e-12))`` for the pieced output ``q``.

    Where the floor is active the loss is locally constant and the gradient
    is zero.
    """
    if not 0 <= y_true < pm.num_classes:
        raise IndexError(f"label {y_true} out of range")
    q, Jq, _ = _pieced_with_jacobian(pm, x)
    if q[y_true] <= LOG_FLOOR:
        return np.zeros(pm.input_dim)
    return -Jq[y_true] / q[y_true]
