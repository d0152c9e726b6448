"""The five-model replication experiment and the 2-D boundary overlay.

Models: phi and psi are retrained masters (different seeds); phi1, phi2 are
phi with two different decoders; psi2 is psi with phi2's decoder. For each
attack and epsilon the table rows are

    a  initial success on phi            f  average L2 on phi1
    b  average L2 on phi                 g  phi1 -> phi2, all outputs
    c  phi -> psi, all outputs           h  phi1 -> phi2, adversarial outputs
    d  phi -> psi, adversarial outputs   i  phi1 -> psi2, all outputs
    e  initial success on phi1           j  phi1 -> psi2, adversarial outputs
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .attacks import MINIMIZATION_KINDS, AttackConfig, apply_epsilon_cap, attack_dispatch
from .attractors import gen_qim, gen_spread_spectrum, piece_together
from .config import ExperimentConfig
from .data import SyntheticSpec, gen_synthetic_dataset, load_csv_dataset
from .evaluation import (
    BoundaryGrid,
    boundary_map,
    collusion_attack,
    gradient_cosine,
    grid_agreement,
    replicate,
)
from .storage import load_decoder, load_model, write_csv, write_json
from .training import Dataset, TrainConfig, evaluate_accuracy, train

log = logging.getLogger(__name__)

PAIRS = (("phi", "psi"), ("phi1", "phi2"), ("phi1", "psi2"))
ROW_LABELS = {
    ("phi", "initial_rate"): "a", ("phi", "avg_l2"): "b",
    ("phi", "psi", "rate_all"): "c", ("phi", "psi", "rate_adv"): "d",
    ("phi1", "initial_rate"): "e", ("phi1", "avg_l2"): "f",
    ("phi1", "phi2", "rate_all"): "g", ("phi1", "phi2", "rate_adv"): "h",
    ("phi1", "psi2", "rate_all"): "i", ("phi1", "psi2", "rate_adv"): "j",
}
PAIR_METRICS = ("n_outputs", "n_adversarial_on_source", "n_misclassified_on_target",
                "n_intersection", "initial_rate", "rate_all", "rate_adv", "avg_l2", "avg_linf")


@dataclass
class FiveModels:
    phi: object
    psi: object
    phi1: object
    phi2: object
    psi2: object

    def as_dict(self):
        return {k: getattr(self, k) for k in ("phi", "psi", "phi1", "phi2", "psi2")}


def load_data(cfg: ExperimentConfig) -> tuple[Dataset, Dataset]:
    d = cfg.data
    if d.source == "csv":
        train_set = load_csv_dataset(d.train_csv, d.classes, "train").dataset
        test_set = load_csv_dataset(d.test_csv, d.classes, "test").dataset
        return train_set, test_set
    spec = SyntheticSpec(d.classes, d.dim, d.per_class, d.separation, d.seed,
                         test_count=d.test_count, pad=d.pad)
    return gen_synthetic_dataset(spec)


def train_config(cfg: ExperimentConfig, seed: int) -> TrainConfig:
    return TrainConfig(seed, cfg.architecture, cfg.epochs, cfg.batch_size,
                       cfg.learning_rate, cfg.momentum)


def make_decoder(cfg: ExperimentConfig, seed: int, n: int, ell: int):
    if cfg.decoder_kind == "spread":
        return gen_spread_spectrum(seed, n, ell, cfg.gain)
    return gen_qim(seed, n, ell, cfg.projections, cfg.delta)


def build_models(cfg: ExperimentConfig, train_set: Dataset) -> FiveModels:
    phi = load_model(cfg.model_phi) if cfg.model_phi else train(train_set, train_config(cfg, cfg.seed_phi))
    psi = load_model(cfg.model_psi) if cfg.model_psi else train(train_set, train_config(cfg, cfg.seed_psi))
    n, ell = phi.num_classes, phi.input_dim
    d1 = load_decoder(cfg.decoder1) if cfg.decoder1 else make_decoder(cfg, cfg.decoder_seed1, n, ell)
    d2 = load_decoder(cfg.decoder2) if cfg.decoder2 else make_decoder(cfg, cfg.decoder_seed2, n, ell)
    return FiveModels(phi, psi, piece_together(phi, d1), piece_together(phi, d2), piece_together(psi, d2))


def sweep(source, samples, acfg: AttackConfig, epsilons) -> dict[float, list]:
    """Attack outcomes on ``source`` for every epsilon.

    Minimization attacks run once without a cap; each epsilon then caps the
    same perturbations.
    """
    if acfg.kind in MINIMIZATION_KINDS:
        raw = attack_dispatch(source, samples, acfg.with_epsilon(math.inf))
        out = {}
        for eps in epsilons:
            capped = []
            for o in raw:
                if o.error is not None:
                    capped.append(o)
                else:
                    capped.append(apply_epsilon_cap(source, samples[o.index].x, o.label, o, eps))
            out[eps] = capped
        return out
    return {eps: attack_dispatch(source, samples, acfg.with_epsilon(eps)) for eps in epsilons}


def replication_table(models: FiveModels, samples, acfg: AttackConfig, epsilons) -> dict:
    """``{eps: {"phi->psi": report, ...}}`` for one attack."""
    ms = models.as_dict()
    on_phi = sweep(models.phi, samples, acfg, epsilons)
    on_phi1 = sweep(models.phi1, samples, acfg, epsilons)
    table = {}
    for eps in epsilons:
        row = {}
        for src, dst in PAIRS:
            outs = on_phi[eps] if src == "phi" else on_phi1[eps]
            if not outs:
                raise ValueError(f"no test sample is classified correctly by {src}")
            row[f"{src}->{dst}"] = replicate(outs, ms[src], ms[dst], samples)
        table[eps] = row
    return table


def table_rows(attack: str, table: dict) -> list[list]:
    rows = []
    for eps, reports in table.items():
        for key, rep in reports.items():
            src, dst = key.split("->")
            d = rep.as_dict()
            for metric in PAIR_METRICS:
                label = ROW_LABELS.get((src, dst, metric)) or ROW_LABELS.get((src, metric), "")
                rows.append([attack, eps, src, dst, metric, label, d[metric]])
    return rows


def gradient_similarity(models: FiveModels, data: Dataset) -> dict:
    return {
        "H1": gradient_cosine(models.phi, models.psi, data),
        "H2": gradient_cosine(models.phi1, models.phi2, data),
        "H3": gradient_cosine(models.phi1, models.psi2, data),
    }


def collusion_series(cfg: ExperimentConfig, train_set: Dataset, phi, samples) -> dict:
    """Retraining pipeline (C1) and attractor pipeline (C2) for each colluder count."""
    need = max(cfg.collusion_sizes) + 1
    retrained = [train(train_set, train_config(cfg, s)) for s in cfg.collusion_retrain_seeds[:need]]
    n, ell = phi.num_classes, phi.input_dim
    copies = [piece_together(phi, make_decoder(cfg, s, n, ell))
              for s in cfg.collusion_decoder_seeds[:need]]
    acfg = AttackConfig("deepfool", epsilon=cfg.collusion_epsilon)
    out = {"retraining": [], "attractor": []}
    for r in cfg.collusion_sizes:
        out["retraining"].append(collusion_attack(retrained[:r], retrained[need - 1], samples, acfg))
        out["attractor"].append(collusion_attack(copies[:r], copies[need - 1], samples, acfg))
    return out


class _Clock:
    def __init__(self, sink):
        self.sink = sink
        self.t = time.perf_counter()

    def lap(self, name):
        now = time.perf_counter()
        if self.sink is not None:
            self.sink[name] = now - self.t
        self.t = now


def run_experiment(cfg: ExperimentConfig, write: bool = True, timings: dict | None = None) -> dict:
    """Run every configured measurement; ``timings`` (if given) receives wall-clock seconds per stage."""
    clock = _Clock(timings)
    train_set, test_set = load_data(cfg)
    models = build_models(cfg, train_set)
    ms = models.as_dict()
    summary: dict = {
        "settings": {
            "epsilons": list(cfg.epsilons),
            "attacks": [a.kind for a in cfg.attacks],
            "architecture": list(cfg.architecture),
            "decoder_kind": cfg.decoder_kind,
            "train_size": len(train_set),
            "test_size": len(test_set),
        },
        "accuracy": {k: evaluate_accuracy(m, test_set) for k, m in ms.items()},
    }
    clock.lap("models")
    rep_rows = []
    summary["replication"] = {}
    for acfg in cfg.attacks:
        k = min(cfg.attack_samples[acfg.kind], len(test_set))
        samples = test_set.subset(np.arange(k)).samples
        log.info("attack %s on %d samples", acfg.kind, k)
        table = replication_table(models, samples, acfg, cfg.epsilons)
        rep_rows += table_rows(acfg.kind, table)
        summary["replication"][acfg.kind] = {
            repr(eps): {pair: r.as_dict() for pair, r in reports.items()} for eps, reports in table.items()
        }
        clock.lap(f"attack:{acfg.kind}")

    grad = None
    if cfg.gradsim_samples > 0:
        k = min(cfg.gradsim_samples, len(test_set))
        grad = gradient_similarity(models, test_set.subset(np.arange(k)))
        summary["gradient_similarity"] = {
            h: {"mean": g.mean, "median": g.median, "n_valid": g.n_valid, "n_degenerate": g.n_degenerate}
            for h, g in grad.items()
        }
        clock.lap("gradsim")

    coll = None
    if cfg.collusion_sizes:
        k = min(cfg.collusion_samples, len(test_set))
        coll = collusion_series(cfg, train_set, models.phi, test_set.subset(np.arange(k)).samples)
        summary["collusion"] = {p: [c.as_dict() for c in reps] for p, reps in coll.items()}
        clock.lap("collusion")

    if write:
        out = Path(cfg.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_csv(out / "accuracy.csv", ["model", "accuracy"],
                  [[k, v] for k, v in summary["accuracy"].items()])
        write_csv(out / "replication.csv",
                  ["attack", "epsilon", "source", "target", "metric", "row", "value"], rep_rows)
        if grad is not None:
            write_csv(out / "gradsim.csv", ["pair", "mean", "median", "n_valid", "n_degenerate"],
                      [[h, g.mean, g.median, g.n_valid, g.n_degenerate] for h, g in grad.items()])
            write_csv(out / "gradsim_hist.csv", ["pair", "bin_lo", "bin_hi", "count"],
                      [[h, g.bin_edges[b], g.bin_edges[b + 1], int(g.histogram[b])]
                       for h, g in grad.items() for b in range(g.histogram.size)])
            write_csv(out / "cosines.csv", ["pair", "index", "cosine"],
                      [[h, i, c] for h, g in grad.items() for i, c in enumerate(g.cosines)])
        if coll is not None:
            write_csv(out / "collusion.csv",
                      ["pipeline", "r", "initial_rate", "rate_all", "rate_adv", "n_outputs", "avg_l2"],
                      [[p, c.r, c.initial_rate, c.rate_all, c.rate_adv, c.n_outputs, c.avg_l2]
                       for p, reps in coll.items() for c in reps])
        write_json(out / "summary.json", summary)
    return summary


# 2-D boundary overlay

@dataclass(frozen=True)
class OverlaySpec:
    separation: float = 4.0
    pad: float = 2.0
    per_class: int = 300
    data_seed: int = 5
    train_seed: int = 1
    hidden: int = 16
    epochs: int = 20
    decoder_seeds: tuple[int, int] = (11, 12)
    resolution: int = 100


@dataclass
class Overlay:
    master: BoundaryGrid
    copy1: BoundaryGrid
    copy2: BoundaryGrid

    @property
    def copies_differ(self) -> float:
        return 1.0 - grid_agreement(self.copy1, self.copy2)

    @property
    def master_agreement(self) -> tuple[float, float]:
        return grid_agreement(self.copy1, self.master), grid_agreement(self.copy2, self.master)

    def rows(self):
        xs, ys = self.master.centers()
        for iy, cy in enumerate(ys):
            for ix, cx in enumerate(xs):
                yield [ix, iy, cx, cy, int(self.master.cells[iy, ix]),
                       int(self.copy1.cells[iy, ix]), int(self.copy2.cells[iy, ix])]


OVERLAY_HEADER = ["ix", "iy", "x", "y", "master", "copy1", "copy2"]


def overlay_models(master, dec1, dec2, resolution: int) -> Overlay:
    return Overlay(boundary_map(master, resolution=resolution),
                   boundary_map(piece_together(master, dec1), resolution=resolution),
                   boundary_map(piece_together(master, dec2), resolution=resolution))


def boundary_fixture(spec: OverlaySpec = OverlaySpec()):
    train_set, _ = gen_synthetic_dataset(SyntheticSpec(3, 2, spec.per_class, spec.separation,
                                                       spec.data_seed, pad=spec.pad))
    master = train(train_set, TrainConfig(spec.train_seed, (2, spec.hidden, 3), spec.epochs))
    k1, k2 = spec.decoder_seeds
    return master, gen_qim(k1, 3, 2), gen_qim(k2, 3, 2)


def boundary_overlay(spec: OverlaySpec = OverlaySpec()) -> Overlay:
    master, d1, d2 = boundary_fixture(spec)
    return overlay_models(master, d1, d2, spec.resolution)
