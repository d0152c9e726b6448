"""Flat ``key = value`` experiment configuration.

Keys carry section prefixes (``data.seed``, ``attack.pgd_l2.steps``).
Blank lines and ``#`` comments are ignored; a key may appear only once.
Lists are comma separated.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .attacks import KINDS, AttackConfig

DEFAULT_EPSILONS = (0.001, 0.01, 0.03, 0.1, 0.3, 0.5, 1.0)


class ConfigError(ValueError):
    """Invalid configuration; ``key`` names the offending entry."""

    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


def parse_text(text: str, source: str = "<config>") -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}", f"expected 'key = value' in {source}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigError(f"line {lineno}", f"empty key in {source}")
        if key in out:
            raise ConfigError(key, f"duplicate key (line {lineno})")
        out[key] = value
    return out


class _Reader:
    def __init__(self, values: dict[str, str]):
        self.values = values
        self.used: set[str] = set()

    def has(self, key):
        return key in self.values

    def raw(self, key, default=None):
        if key not in self.values:
            if default is None:
                raise ConfigError(key, "missing required key")
            return default
        self.used.add(key)
        return self.values[key]

    def str(self, key, default=None) -> str:
        return self.raw(key, default)

    def int(self, key, default=None) -> int:
        v = self.raw(key, None if default is None else str(default))
        try:
            return int(v)
        except ValueError:
            raise ConfigError(key, f"expected an integer, got {v!r}") from None

    def float(self, key, default=None) -> float:
        v = self.raw(key, None if default is None else repr(default))
        try:
            out = float(v)
        except ValueError:
            raise ConfigError(key, f"expected a number, got {v!r}") from None
        if math.isnan(out):
            raise ConfigError(key, "NaN is not allowed")
        return out

    def list(self, key, conv, default=None) -> list:
        if key not in self.values and default is not None:
            return list(default)
        v = self.raw(key)
        try:
            return [conv(p.strip()) for p in v.split(",") if p.strip()]
        except ValueError:
            raise ConfigError(key, f"bad list entry in {v!r}") from None

    def unused(self):
        return sorted(set(self.values) - self.used)


@dataclass(frozen=True)
class DataSection:
    source: str = "synthetic"
    classes: int = 3
    dim: int = 64
    per_class: int = 1000
    test_count: int = 1000
    separation: float = 6.0
    pad: float = 4.0
    seed: int = 7
    train_csv: Optional[Path] = None
    test_csv: Optional[Path] = None


@dataclass(frozen=True)
class ExperimentConfig:
    output_dir: Path
    data: DataSection
    architecture: tuple[int, ...]
    epochs: int
    batch_size: int
    learning_rate: float
    momentum: float
    seed_phi: int
    seed_psi: int
    model_phi: Optional[Path]
    model_psi: Optional[Path]
    decoder_kind: str
    decoder_seed1: int
    decoder_seed2: int
    projections: int
    delta: float
    gain: float
    decoder1: Optional[Path]
    decoder2: Optional[Path]
    eval_samples: int
    epsilons: tuple[float, ...]
    attacks: tuple[AttackConfig, ...]
    attack_samples: dict = field(default_factory=dict)
    gradsim_samples: int = 0
    collusion_sizes: tuple[int, ...] = ()
    collusion_samples: int = 0
    collusion_retrain_seeds: tuple[int, ...] = ()
    collusion_decoder_seeds: tuple[int, ...] = ()
    collusion_epsilon: float = math.inf


def _resolve(base: Path, p: Optional[str]) -> Optional[Path]:
    if p is None:
        return None
    path = Path(p)
    return Path(os.path.normpath(path if path.is_absolute() else base / path))


def _attack(r: _Reader, kind: str) -> AttackConfig:
    pre = f"attack.{kind}."
    kw = {}
    if r.has(pre + "steps"):
        kw["steps"] = r.int(pre + "steps")
    if r.has(pre + "step_size"):
        kw["step_size"] = r.float(pre + "step_size")
    for name in ("cw_c", "cw_kappa", "overshoot", "orth_step", "source_step"):
        if r.has(pre + name):
            kw[name] = r.float(pre + name)
    kw["rng_seed"] = r.int(pre + "rng_seed", 0)
    try:
        return AttackConfig(kind, **kw)
    except ValueError as exc:
        raise ConfigError(f"attack.{kind}", str(exc)) from None


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError("config", f"cannot read {path}: {exc.strerror}") from None
    return build_config(parse_text(text, str(path)), path.parent)


def build_config(values: dict[str, str], base: Path = Path(".")) -> ExperimentConfig:
    r = _Reader(values)
    source = r.str("data.source", "synthetic")
    if source not in ("synthetic", "csv"):
        raise ConfigError("data.source", f"expected 'synthetic' or 'csv', got {source!r}")
    if source == "csv":
        data = DataSection(source="csv", train_csv=_resolve(base, r.str("data.train_csv")),
                           test_csv=_resolve(base, r.str("data.test_csv")),
                           classes=r.int("data.classes", 3))
    else:
        data = DataSection(
            classes=r.int("data.classes", 3), dim=r.int("data.dim", 64),
            per_class=r.int("data.per_class", 1000), test_count=r.int("data.test_count", 1000),
            separation=r.float("data.separation", 6.0), pad=r.float("data.pad", 4.0),
            seed=r.int("data.seed", 7))
        if data.classes < 2 or data.dim < 1 or data.per_class < 1 or data.test_count < 1:
            raise ConfigError("data", "classes >= 2 and positive dim/per_class/test_count required")

    arch = tuple(r.list("train.architecture", int, (64, 32, 3)))
    if len(arch) < 2 or min(arch) < 1:
        raise ConfigError("train.architecture", "need at least two positive widths")

    kind = r.str("decoder.kind", "qim")
    if kind not in ("qim", "spread"):
        raise ConfigError("decoder.kind", f"expected 'qim' or 'spread', got {kind!r}")

    names = r.list("attacks", str, ("fgsm", "pgd_l2", "deepfool"))
    for n in names:
        if n not in KINDS:
            raise ConfigError("attacks", f"unknown attack {n!r}")
    if len(set(names)) != len(names):
        raise ConfigError("attacks", "duplicate attack")
    eval_samples = r.int("eval.samples", 200)
    per_attack = {n: r.int(f"attack.{n}.samples", eval_samples) for n in names}

    eps = tuple(r.list("eval.epsilons", float, DEFAULT_EPSILONS))
    if not eps or any(not (e >= 0) for e in eps):
        raise ConfigError("eval.epsilons", "need a non-empty list of non-negative values")

    sizes = tuple(r.list("collusion.sizes", int, ()))
    if any(s < 1 for s in sizes):
        raise ConfigError("collusion.sizes", "sizes must be positive")
    need = max(sizes) + 1 if sizes else 0
    rseeds = tuple(r.list("collusion.retrain_seeds", int, ()))
    dseeds = tuple(r.list("collusion.decoder_seeds", int, ()))
    if sizes and (len(rseeds) < need or len(dseeds) < need):
        raise ConfigError("collusion.retrain_seeds",
                          f"need {need} retraining and decoder seeds (largest size + victim)")

    cfg = ExperimentConfig(
        output_dir=_resolve(base, r.str("output_dir")),
        data=data,
        architecture=arch,
        epochs=r.int("train.epochs", 20),
        batch_size=r.int("train.batch_size", 32),
        learning_rate=r.float("train.learning_rate", 0.01),
        momentum=r.float("train.momentum", 0.9),
        seed_phi=r.int("seeds.phi"),
        seed_psi=r.int("seeds.psi"),
        model_phi=_resolve(base, values.get("models.phi")),
        model_psi=_resolve(base, values.get("models.psi")),
        decoder_kind=kind,
        decoder_seed1=r.int("decoder.seed1"),
        decoder_seed2=r.int("decoder.seed2"),
        projections=r.int("decoder.projections", 16),
        delta=r.float("decoder.delta", 0.5),
        gain=r.float("decoder.gain", 5.0),
        decoder1=_resolve(base, values.get("decoder.file1")),
        decoder2=_resolve(base, values.get("decoder.file2")),
        eval_samples=eval_samples,
        epsilons=eps,
        attacks=tuple(_attack(r, n) for n in names),
        attack_samples=per_attack,
        gradsim_samples=r.int("gradsim.samples", 300),
        collusion_sizes=sizes,
        collusion_samples=r.int("collusion.samples", 100),
        collusion_retrain_seeds=rseeds,
        collusion_decoder_seeds=dseeds,
        collusion_epsilon=r.float("collusion.epsilon", math.inf),
    )
    r.used.update(k for k in ("models.phi", "models.psi", "decoder.file1", "decoder.file2") if k in values)
    if cfg.seed_phi == cfg.seed_psi:
        raise ConfigError("seeds.psi", "must differ from seeds.phi")
    if cfg.decoder_seed1 == cfg.decoder_seed2:
        raise ConfigError("decoder.seed2", "must differ from decoder.seed1")
    if leftover := r.unused():
        raise ConfigError(leftover[0], "unknown key")
    return cfg
