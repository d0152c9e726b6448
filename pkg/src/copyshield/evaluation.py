"""Replication rates, gradient similarity, collusion, decision-boundary grids."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .attacks import AttackConfig, AttackOutcome, attack_dispatch, is_adversarial
from .numerics import LOG_FLOOR, DimensionError, predict
from .training import Dataset

HIST_BINS = 101


@dataclass
class ReplicationReport:
    n_outputs: int
    n_adversarial_on_source: int
    n_misclassified_on_target: int
    n_intersection: int
    initial_rate: float
    rate_all: float
    rate_adv: Optional[float]
    avg_l2: float
    avg_linf: float

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def _check_pair(a, b):
    if (a.num_classes, a.input_dim) != (b.num_classes, b.input_dim):
        raise DimensionError("models must share class count and input dimension")


def replicate(outcomes: Sequence[AttackOutcome], source, target, samples=None,
              source_success: Optional[Sequence[bool]] = None) -> ReplicationReport:
    """Count how many attack outputs found on ``source`` also fool ``target``.

    A = all outputs, B = outputs misclassified by the source (or the supplied
    ``source_success`` flags), C = outputs misclassified by the target, both
    against the true label.
    """
    _check_pair(source, target)
    if not outcomes:
        raise ValueError("no attack outputs to replicate")
    labels = []
    for k, o in enumerate(outcomes):
        y = o.label
        if samples is not None:
            y = samples[o.index if o.index >= 0 else k].y
        labels.append(int(y))
    if source_success is None:
        B = [is_adversarial(source, o.x_adv, y) for o, y in zip(outcomes, labels)]
    else:
        B = [bool(b) for b in source_success]
    C = [is_adversarial(target, o.x_adv, y) for o, y in zip(outcomes, labels)]
    nA = len(outcomes)
    nB = sum(B)
    nC = sum(C)
    nBC = sum(b and c for b, c in zip(B, C))
    return ReplicationReport(
        n_outputs=nA,
        n_adversarial_on_source=nB,
        n_misclassified_on_target=nC,
        n_intersection=nBC,
        initial_rate=nB / nA,
        rate_all=nC / nA,
        rate_adv=(nBC / nB) if nB else None,
        avg_l2=float(np.mean([o.l2_dist for o in outcomes])),
        avg_linf=float(np.mean([o.linf_dist for o in outcomes])),
    )


@dataclass
class GradientSimilarityReport:
    cosines: np.ndarray
    n_degenerate: int
    mean: float
    median: float
    histogram: np.ndarray
    bin_edges: np.ndarray = field(repr=False)

    @property
    def n_valid(self) -> int:
        return int(self.cosines.size)


def cosine(a, b) -> Optional[float]:
    na = float(np.linalg.norm(a))
    nb = float(np.linalg.norm(b))
    if na < 1e-12 or nb < 1e-12:
        return None
    return float(np.clip(np.dot(a, b) / (na * nb), -1.0, 1.0))


def gradient_cosine(mA, mB, data: Dataset) -> GradientSimilarityReport:
    _check_pair(mA, mB)
    cos, bad = [], 0
    for x, y in zip(data.X, data.y):
        c = cosine(mA.loss_gradient(x, int(y)), mB.loss_gradient(x, int(y)))
        if c is None:
            bad += 1
        else:
            cos.append(c)
    if not cos:
        raise ValueError("every sample had a vanishing gradient")
    cos = np.array(cos)
    hist, edges = np.histogram(cos, bins=HIST_BINS, range=(-1.0, 1.0))
    return GradientSimilarityReport(cos, bad, float(np.mean(cos)), float(np.median(cos)), hist, edges)


class EnsembleModel:
    """Average of several copies' outputs, attacked as a single model.

    ``forward`` averages soft-labels, ``logits`` averages each member's
    logits (for a pieced copy these are its pieced outputs), and Jacobians
    are averaged the same way.
    """

    def __init__(self, members: Sequence):
        if len(members) < 1:
            raise ValueError("an ensemble needs at least one member")
        for m in members[1:]:
            _check_pair(members[0], m)
        self.members = list(members)
        self.num_classes = members[0].num_classes
        self.input_dim = members[0].input_dim

    def _mean(self, values):
        tot = values[0]
        for v in values[1:]:
            tot = tot + v
        return tot / len(values)

    def forward(self, x):
        return self._mean([m.forward(x) for m in self.members])

    def logits(self, x):
        return self._mean([m.logits(x) for m in self.members])

    def logits_jacobian(self, x):
        parts = [m.logits_jacobian(x) for m in self.members]
        return self._mean([p[0] for p in parts]), self._mean([p[1] for p in parts])

    def loss_gradient(self, x, y: int):
        # d/dx -log(mean_i p_i[y]) = -(mean_i dp_i[y]/dx) / mean_i p_i[y]
        ps, grads = [], []
        for m in self.members:
            p = m.forward(x)
            g = m.loss_gradient(x, y)
            ps.append(p[y])
            grads.append(-p[y] * g)
        py = self._mean(ps)
        if py <= LOG_FLOOR:
            return np.zeros(self.input_dim)
        return -self._mean(grads) / py


def collusion_success(ensemble: EnsembleModel, x, y: int) -> bool:
    """The ensemble and every member misclassify ``x``."""
    return is_adversarial(ensemble, x, y) and all(is_adversarial(m, x, y) for m in ensemble.members)


@dataclass
class CollusionReport:
    r: int
    initial_rate: float
    rate_all: float
    rate_adv: Optional[float]
    n_outputs: int
    avg_l2: float

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def collusion_attack(colluders: Sequence, victim, samples, cfg: AttackConfig) -> CollusionReport:
    if not colluders:
        raise ValueError("need at least one colluder")
    if len(samples) == 0:
        raise ValueError("empty sample set")
    for c in colluders:
        _check_pair(c, victim)
    target = colluders[0] if len(colluders) == 1 else EnsembleModel(colluders)
    members = [target] if len(colluders) == 1 else target.members
    outcomes = attack_dispatch(target, samples, cfg)
    if not outcomes:
        raise ValueError("no sample is classified correctly by the ensemble")
    flags = [is_adversarial(target, o.x_adv, o.label)
             and all(is_adversarial(m, o.x_adv, o.label) for m in members)
             for o in outcomes]
    rep = replicate(outcomes, target, victim, source_success=flags)
    return CollusionReport(len(colluders), rep.initial_rate, rep.rate_all, rep.rate_adv,
                           rep.n_outputs, rep.avg_l2)


@dataclass
class BoundaryGrid:
    lo: tuple[float, float]
    hi: tuple[float, float]
    resolution: int
    cells: np.ndarray  # (resolution, resolution); cells[iy, ix]

    def centers(self):
        xs = self.lo[0] + (np.arange(self.resolution) + 0.5) * (self.hi[0] - self.lo[0]) / self.resolution
        ys = self.lo[1] + (np.arange(self.resolution) + 0.5) * (self.hi[1] - self.lo[1]) / self.resolution
        return xs, ys


def boundary_map(m, lo=(0.0, 0.0), hi=(1.0, 1.0), resolution: int = 100) -> BoundaryGrid:
    if m.input_dim != 2:
        raise DimensionError(f"boundary maps need a 2-D input model, got {m.input_dim}")
    if resolution < 1:
        raise ValueError("resolution must be positive")
    grid = BoundaryGrid(tuple(map(float, lo)), tuple(map(float, hi)), int(resolution),
                        np.zeros((resolution, resolution), dtype=np.int64))
    xs, ys = grid.centers()
    for iy, cy in enumerate(ys):
        for ix, cx in enumerate(xs):
            grid.cells[iy, ix] = predict(m, np.array([cx, cy]))
    return grid


def grid_agreement(a: BoundaryGrid, b: BoundaryGrid) -> float:
    if a.cells.shape != b.cells.shape:
        raise DimensionError(f"grid shapes differ: {a.cells.shape} vs {b.cells.shape}")
    return float(np.mean(a.cells == b.cells))
