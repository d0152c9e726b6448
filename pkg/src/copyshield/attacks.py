"""Un-targeted evasion attacks: FGSM, FGM, PGD (L2/Linf), DeepFool, C&W, boundary.

Every attack takes an *attackable* model, i.e. anything exposing
``num_classes``, ``input_dim``, ``forward(x)`` and, for the white-box
attacks, ``logits(x)``, ``logits_jacobian(x)`` and ``loss_gradient(x, y)``.
:class:`~copyshield.numerics.Model`, :class:`~copyshield.attractors.PiecedModel`
and :class:`~copyshield.evaluation.EnsembleModel` all qualify.

Minimization attacks (DeepFool, C&W, boundary) treat ``epsilon`` as a cap on
the L2 norm of the returned perturbation: a longer perturbation is scaled
back onto the epsilon-ball and success is judged on the capped point.
``math.inf`` disables the cap.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .numerics import LabeledSample, as_vector, predict
from .rng import TAG_ATTACK, Stream, derive

log = logging.getLogger(__name__)

KINDS = ("fgsm", "fgm", "pgd_l2", "pgd_linf", "deepfool", "cw", "boundary")
MINIMIZATION_KINDS = ("deepfool", "cw", "boundary")

_DEFAULT_STEPS = {"fgsm": 1, "fgm": 1, "pgd_l2": 40, "pgd_linf": 40,
                  "deepfool": 50, "cw": 200, "boundary": 2000}

BOUNDARY_INIT_TRIES = 200
BOUNDARY_WINDOW = 20


@dataclass(frozen=True)
class AttackConfig:
    kind: str
    epsilon: float = math.inf
    steps: Optional[int] = None
    step_size: Optional[float] = None
    cw_c: float = 1.0
    cw_kappa: float = 0.0
    overshoot: float = 0.02
    rng_seed: int = 0
    orth_step: float = 0.01
    source_step: float = 0.01
    targeted: bool = False
    target: Optional[int] = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown attack kind {self.kind!r}; expected one of {KINDS}")
        if not self.epsilon >= 0:
            raise ValueError("epsilon must be >= 0")
        if self.steps is None:
            object.__setattr__(self, "steps", _DEFAULT_STEPS[self.kind])
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if self.step_size is None:
            object.__setattr__(self, "step_size", self._default_step_size())
        if self.kind == "deepfool" and not self.overshoot > 0:
            raise ValueError("deepfool overshoot must be positive")
        if self.cw_c < 0 or self.cw_kappa < 0:
            raise ValueError("cw_c and cw_kappa must be non-negative")
        if self.targeted:
            log.warning("targeted attacks are experimental")

    def _default_step_size(self) -> float:
        if self.kind in ("pgd_l2", "pgd_linf"):
            eps = self.epsilon if math.isfinite(self.epsilon) else 1.0
            return 2.5 * eps / self.steps
        if self.kind == "cw":
            return 0.01
        return 1.0

    def with_epsilon(self, eps: float) -> "AttackConfig":
        step = None if self.kind in ("pgd_l2", "pgd_linf") else self.step_size
        return replace(self, epsilon=eps, step_size=step)


@dataclass
class AttackOutcome:
    x_adv: np.ndarray
    success: bool
    l2_dist: float
    linf_dist: float
    iterations_used: int
    label: int = -1
    index: int = -1
    error: Optional[str] = None


def _outcome(m, x, x_adv, y, iters, success=None) -> AttackOutcome:
    x_adv = np.clip(x_adv, 0.0, 1.0)
    d = x_adv - x
    if success is None:
        success = is_adversarial(m, x_adv, y)
    return AttackOutcome(x_adv, bool(success), float(np.linalg.norm(d)),
                         float(np.max(np.abs(d))), iters, y)


def is_adversarial(m, x, y: int) -> bool:
    """Un-targeted misclassification: argmax of the soft-label differs from ``y``."""
    return predict(m, x) != y


def _prepare(m, s: LabeledSample):
    x = as_vector(s.x, m.input_dim)
    y = int(s.y)
    if not 0 <= y < m.num_classes:
        raise IndexError(f"label {y} out of range")
    return x, y


def _already_wrong(m, x, y):
    if is_adversarial(m, x, y):
        return AttackOutcome(x.copy(), True, 0.0, 0.0, 0, y)
    return None


def _stream(cfg: AttackConfig, sample_index: int) -> Stream:
    return Stream(derive(cfg.rng_seed, TAG_ATTACK, sample_index))


def cap_l2(x: np.ndarray, x_adv: np.ndarray, eps: float) -> np.ndarray:
    """Scale the perturbation back onto the L2 ball of radius ``eps``."""
    d = x_adv - x
    norm = float(np.linalg.norm(d))
    if norm <= eps:
        return x_adv
    return x + d * (eps / norm)


def apply_epsilon_cap(m, x, y: int, raw: AttackOutcome, eps: float) -> AttackOutcome:
    """Outcome of a minimization attack once its perturbation is capped at ``eps``."""
    if raw.l2_dist <= eps:
        out = replace(raw)
        return out
    capped = _outcome(m, x, cap_l2(x, raw.x_adv, eps), y, raw.iterations_used)
    capped.index = raw.index
    return capped


def fgsm(m, s: LabeledSample, cfg: AttackConfig) -> AttackOutcome:
    x, y = _prepare(m, s)
    if (out := _already_wrong(m, x, y)) is not None:
        return out
    g = m.loss_gradient(x, y)
    return _outcome(m, x, x + cfg.epsilon * np.sign(g), y, 1)


def fgm(m, s: LabeledSample, cfg: AttackConfig) -> AttackOutcome:
    x, y = _prepare(m, s)
    if (out := _already_wrong(m, x, y)) is not None:
        return out
    g = m.loss_gradient(x, y)
    norm = float(np.linalg.norm(g))
    if norm < 1e-12:
        return AttackOutcome(x.copy(), False, 0.0, 0.0, 1, y)
    return _outcome(m, x, x + cfg.epsilon * g / norm, y, 1)


def _project(x, xt, eps, norm):
    d = xt - x
    if norm == "linf":
        d = np.clip(d, -eps, eps)
    else:
        n = float(np.linalg.norm(d))
        if n > eps:
            d = d * (eps / n)
    return np.clip(x + d, 0.0, 1.0)


def _random_start(x, eps, norm, rng: Stream):
    ell = x.size
    if norm == "linf":
        d = (2.0 * rng.uniform(ell) - 1.0) * eps
    else:
        v = rng.normal(ell)
        v /= np.linalg.norm(v)
        d = v * eps * rng.uniform(1)[0] ** (1.0 / ell)
    return np.clip(x + d, 0.0, 1.0)


def pgd(m, s: LabeledSample, cfg: AttackConfig, norm: str | None = None,
        sample_index: int = 0) -> AttackOutcome:
    """Projected gradient ascent on the loss inside an L2 or Linf epsilon-ball.

    ``cfg.rng_seed == 0`` starts from ``x`` instead of a random ball point.
    """
    if norm is None:
        norm = "l2" if cfg.kind == "pgd_l2" else "linf"
    if norm not in ("l2", "linf"):
        raise ValueError("norm must be 'l2' or 'linf'")
    x, y = _prepare(m, s)
    if (out := _already_wrong(m, x, y)) is not None:
        return out
    eps = cfg.epsilon
    xt = x.copy() if cfg.rng_seed == 0 else _random_start(x, eps, norm, _stream(cfg, sample_index))
    for _ in range(cfg.steps):
        g = m.loss_gradient(xt, y)
        if norm == "linf":
            step = np.sign(g)
        else:
            gn = float(np.linalg.norm(g))
            step = g / gn if gn >= 1e-12 else np.zeros_like(g)
        xt = _project(x, xt + cfg.step_size * step, eps, norm)
    return _outcome(m, x, xt, y, cfg.steps)


def _argmax(v) -> int:
    return int(np.argmax(v))


def deepfool_raw(m, x, y, steps, overshoot):
    """Uncapped DeepFool; returns (x_adv, iterations)."""
    total = np.zeros_like(x)
    xi = x.copy()
    it = 0
    for it in range(1, steps + 1):
        z, J = m.logits_jacobian(xi)
        if _argmax(z) != y:
            it -= 1
            break
        best, best_r = math.inf, None
        for j in range(m.num_classes):
            if j == y:
                continue
            w = J[j] - J[y]
            f = z[j] - z[y]
            wn2 = float(w @ w)
            if wn2 < 1e-24:
                continue
            dist = abs(f) / math.sqrt(wn2)
            if dist < best:
                best, best_r = dist, (abs(f) / wn2) * w
        if best_r is None:
            break
        total = total + best_r
        xi = np.clip(x + (1.0 + overshoot) * total, 0.0, 1.0)
    return xi, it


def deepfool(m, s: LabeledSample, cfg: AttackConfig) -> AttackOutcome:
    x, y = _prepare(m, s)
    if (out := _already_wrong(m, x, y)) is not None:
        return out
    x_adv, iters = deepfool_raw(m, x, y, cfg.steps, cfg.overshoot)
    return _outcome(m, x, cap_l2(x, x_adv, cfg.epsilon), y, iters)


def _cw_margin(z, y, kappa):
    other = max(z[i] for i in range(z.size) if i != y)
    k = next(i for i in range(z.size) if i != y and z[i] == other)
    return max(z[y] - other, -kappa), k


def cw(m, s: LabeledSample, cfg: AttackConfig) -> AttackOutcome:
    """Gradient descent on ``||x' - x||² + c * max(z_y - max_{i≠y} z_i, -kappa)``.

    Iterates are clipped to the unit box. Returns the smallest successful
    iterate, or the last one if none succeeded.
    """
    x, y = _prepare(m, s)
    if (out := _already_wrong(m, x, y)) is not None:
        return out
    xt = x.copy()
    best, best_d = None, math.inf
    for _ in range(cfg.steps):
        z, J = m.logits_jacobian(xt)
        margin, k = _cw_margin(z, y, cfg.cw_kappa)
        grad = 2.0 * (xt - x)
        if margin > -cfg.cw_kappa:
            grad = grad + cfg.cw_c * (J[y] - J[k])
        xt = np.clip(xt - cfg.step_size * grad, 0.0, 1.0)
        if is_adversarial(m, xt, y):
            d = float(np.linalg.norm(xt - x))
            if d < best_d:
                best, best_d = xt.copy(), d
    x_adv = best if best is not None else xt
    return _outcome(m, x, cap_l2(x, x_adv, cfg.epsilon), y, cfg.steps)


class ForwardOnly:
    """Black-box view of a model: soft-labels and shape, nothing else."""

    __slots__ = ("_forward", "num_classes", "input_dim")

    def __init__(self, m):
        self._forward = m.forward
        self.num_classes = m.num_classes
        self.input_dim = m.input_dim

    def forward(self, x):
        return self._forward(x)


def _adapt(step, hits):
    rate = sum(hits) / len(hits)
    if rate > 0.5:
        return step * 1.5
    if rate < 0.2:
        return step / 1.5
    return step


def boundary_raw(oracle: ForwardOnly, x, y, cfg: AttackConfig, rng: Stream):
    """Decision-based boundary walk; returns (x_adv or None, accepted steps, initial distance)."""
    ell = x.size
    start = None
    for _ in range(BOUNDARY_INIT_TRIES):
        cand = rng.uniform(ell)
        if predict(oracle, cand) != y:
            start = cand
            break
    if start is None:
        return None, 0, 0.0
    cur = start
    d0 = float(np.linalg.norm(cur - x))
    orth, src = cfg.orth_step, cfg.source_step
    orth_hits, src_hits = [], []
    accepted = 0
    for _ in range(cfg.steps):
        diff = x - cur
        dist = float(np.linalg.norm(diff))
        if dist < 1e-12:
            break
        eta = rng.normal(ell)
        eta -= (eta @ diff) / (dist * dist) * diff
        en = float(np.linalg.norm(eta))
        if en > 0:
            eta *= orth * dist / en
        # orthogonal step, pulled back onto the sphere of radius dist around x
        off = cur + eta - x
        sphere = np.clip(x + off * (dist / float(np.linalg.norm(off))), 0.0, 1.0)
        ok = predict(oracle, sphere) != y
        orth_hits.append(ok)
        if ok:
            cand = np.clip(sphere + src * (x - sphere), 0.0, 1.0)
            ok = predict(oracle, cand) != y
            src_hits.append(ok)
            if ok:
                cur = cand
                accepted += 1
        if len(orth_hits) == BOUNDARY_WINDOW:
            orth = _adapt(orth, orth_hits)
            orth_hits = []
        if len(src_hits) == BOUNDARY_WINDOW:
            src = min(_adapt(src, src_hits), 0.5)
            src_hits = []
    return cur, accepted, d0


def boundary_attack(m, s: LabeledSample, cfg: AttackConfig, sample_index: int = 0) -> AttackOutcome:
    oracle = m if isinstance(m, ForwardOnly) else ForwardOnly(m)
    x, y = _prepare(oracle, s)
    if (out := _already_wrong(oracle, x, y)) is not None:
        return out
    x_adv, accepted, _ = boundary_raw(oracle, x, y, cfg, _stream(cfg, sample_index))
    if x_adv is None:
        return AttackOutcome(x.copy(), False, 0.0, 0.0, 0, y, error="initialization failed")
    return _outcome(oracle, x, cap_l2(x, x_adv, cfg.epsilon), y, accepted)


def run_attack(m, s: LabeledSample, cfg: AttackConfig, sample_index: int = 0) -> AttackOutcome:
    kind = cfg.kind
    if kind == "fgsm":
        return fgsm(m, s, cfg)
    if kind == "fgm":
        return fgm(m, s, cfg)
    if kind in ("pgd_l2", "pgd_linf"):
        return pgd(m, s, cfg, sample_index=sample_index)
    if kind == "deepfool":
        return deepfool(m, s, cfg)
    if kind == "cw":
        return cw(m, s, cfg)
    return boundary_attack(ForwardOnly(m), s, cfg, sample_index=sample_index)


def correctly_classified(m, samples) -> list[int]:
    return [i for i, s in enumerate(samples) if predict(m, s.x) == s.y]


def attack_dispatch(m, samples, cfg: AttackConfig, indices=None) -> list[AttackOutcome]:
    """Attack every sample ``m`` classifies correctly.

    Per-sample randomness is keyed by the sample's position in ``samples``,
    so results do not depend on execution order. Exceptions become failed
    outcomes carrying the error text.
    """
    if indices is None:
        indices = correctly_classified(m, samples)
    out = []
    for i in indices:
        s = samples[i]
        try:
            o = run_attack(m, s, cfg, sample_index=i)
        except (ArithmeticError, ValueError) as exc:
            x = np.asarray(s.x, dtype=np.float64)
            o = AttackOutcome(x.copy(), False, 0.0, 0.0, 0, int(s.y), error=str(exc))
        o.index = i
        out.append(o)
    return out


def success_rate(outcomes) -> float:
    if not outcomes:
        return 0.0
    return sum(o.success for o in outcomes) / len(outcomes)
