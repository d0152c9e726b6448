"""Command-line entry point: ``copyshield <command> ...``."""

from __future__ import annotations

import argparse
import csv
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import storage
from .attacks import KINDS, AttackConfig, AttackOutcome, attack_dispatch
from .attractors import gen_qim, gen_spread_spectrum
from .config import ConfigError, load_config
from .data import SyntheticSpec, gen_synthetic_dataset, load_csv_dataset, save_csv_dataset
from .evaluation import collusion_attack, gradient_cosine, replicate
from .pipeline import OVERLAY_HEADER, OverlaySpec, boundary_fixture, overlay_models, run_experiment
from .training import Dataset, TrainConfig, evaluate_accuracy, train

log = logging.getLogger("copyshield")


class UsageError(ValueError):
    pass


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(v) for v in text.split(","))


def _outdir(path) -> Path:
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    return p


def _load_data(path, classes=None, split="test") -> Dataset:
    return load_csv_dataset(path, classes, split).dataset


def _head(data: Dataset, n) -> Dataset:
    if n is None or n >= len(data):
        return data
    return data.subset(np.arange(n))


def cmd_gen_data(a):
    spec = SyntheticSpec(a.classes, a.dim, a.per_class, a.separation, a.seed,
                         test_count=a.test_count, pad=a.pad)
    train_set, test_set = gen_synthetic_dataset(spec)
    out = _outdir(a.out)
    save_csv_dataset(train_set, out / "train.csv")
    save_csv_dataset(test_set, out / "test.csv")
    print(f"wrote {len(train_set)} train and {len(test_set)} test samples to {out}")


def cmd_train(a):
    data = _load_data(a.data, a.classes, "train")
    arch = a.architecture or (data.input_dim, 32, data.num_classes)
    model = train(data, TrainConfig(a.seed, arch, a.epochs, a.batch_size, a.learning_rate, a.momentum))
    storage.save_model(model, a.out)
    print(f"wrote {a.out} (train accuracy {evaluate_accuracy(model, data):.4f})")


def cmd_inject(a):
    master = storage.load_model(a.model)
    n, ell = master.num_classes, master.input_dim
    if a.kind == "spread":
        dec = gen_spread_spectrum(a.seed, n, ell, a.gain)
    else:
        dec = gen_qim(a.seed, n, ell, a.projections, a.delta)
    out = _outdir(a.out_dir)
    name = a.name or f"{Path(a.model).stem}_copy"
    storage.save_decoder(dec, out / f"{name}.dec")
    storage.save_pieced_reference(out / f"{name}.pieced", a.model, out / f"{name}.dec")
    print(f"wrote {out / (name + '.dec')} (secret) and {out / (name + '.pieced')}")


def _attack_config(a) -> AttackConfig:
    kw = {"epsilon": a.epsilon, "rng_seed": a.rng_seed}
    if a.steps is not None:
        kw["steps"] = a.steps
    if a.step_size is not None:
        kw["step_size"] = a.step_size
    if a.cw_c is not None:
        kw["cw_c"] = a.cw_c
    return AttackConfig(a.attack, **kw)


def cmd_attack(a):
    model = storage.load_any_model(a.model)
    data = _head(_load_data(a.data, model.num_classes), a.samples)
    outcomes = attack_dispatch(model, data.samples, _attack_config(a))
    out = _outdir(a.out)
    if outcomes:
        adv = Dataset(np.stack([o.x_adv for o in outcomes]), np.array([o.label for o in outcomes]),
                      model.num_classes, "test")
        save_csv_dataset(adv, out / "adversarial.csv")
    storage.write_csv(out / "outcomes.csv",
                      ["index", "label", "success", "l2_dist", "linf_dist", "iterations", "error"],
                      [[o.index, o.label, o.success, o.l2_dist, o.linf_dist, o.iterations_used,
                        o.error or ""] for o in outcomes])
    wins = sum(o.success for o in outcomes)
    print(f"{len(outcomes)} attacked, {wins} adversarial on the attacked model")


def cmd_evaluate(a):
    if a.config:
        if a.source or a.target or a.adversarial or a.model:
            raise UsageError("--config cannot be combined with other inputs")
        cfg = load_config(a.config)
        summary = run_experiment(cfg)
        print(f"wrote reports to {cfg.output_dir}")
        for name, acc in summary["accuracy"].items():
            print(f"  accuracy {name}: {acc:.4f}")
        return
    if a.model:
        model = storage.load_any_model(a.model)
        if not a.data:
            raise UsageError("--model needs --data")
        print(f"accuracy {evaluate_accuracy(model, _load_data(a.data, model.num_classes)):.6f}")
        return
    if not (a.source and a.target and a.adversarial):
        raise UsageError("need --config, --model/--data, or --source/--target/--adversarial")
    source = storage.load_any_model(a.source)
    target = storage.load_any_model(a.target)
    adv_dir = Path(a.adversarial)
    adv = _load_data(adv_dir / "adversarial.csv", source.num_classes)
    outcomes = [AttackOutcome(x, False, 0.0, 0.0, 0, int(y), k) for k, (x, y) in enumerate(zip(adv.X, adv.y))]
    rep = replicate(outcomes, source, target)
    d = rep.as_dict()
    # distances come from the attack run
    with open(adv_dir / "outcomes.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    if len(rows) == len(outcomes):
        d["avg_l2"] = float(np.mean([float(r["l2_dist"]) for r in rows]))
        d["avg_linf"] = float(np.mean([float(r["linf_dist"]) for r in rows]))
    out = _outdir(a.out) if a.out else None
    if out:
        storage.write_csv(out / "replication.csv", ["metric", "value"], [[k, v] for k, v in d.items()])
        storage.write_json(out / "replication.json", d)
    for k, v in d.items():
        print(f"{k} {storage.fmt_value(v)}")


def cmd_gradsim(a):
    ma, mb = storage.load_any_model(a.a), storage.load_any_model(a.b)
    data = _head(_load_data(a.data, ma.num_classes), a.samples)
    rep = gradient_cosine(ma, mb, data)
    out = _outdir(a.out)
    storage.write_csv(out / "gradsim.csv", ["mean", "median", "n_valid", "n_degenerate"],
                      [[rep.mean, rep.median, rep.n_valid, rep.n_degenerate]])
    storage.write_csv(out / "gradsim_hist.csv", ["bin_lo", "bin_hi", "count"],
                      [[rep.bin_edges[b], rep.bin_edges[b + 1], int(rep.histogram[b])]
                       for b in range(rep.histogram.size)])
    storage.write_csv(out / "cosines.csv", ["index", "cosine"], list(enumerate(rep.cosines)))
    print(f"mean {rep.mean:.6f} median {rep.median:.6f} valid {rep.n_valid} degenerate {rep.n_degenerate}")


def cmd_collude(a):
    colluders = [storage.load_any_model(p) for p in a.colluders]
    victim = storage.load_any_model(a.victim)
    data = _head(_load_data(a.data, victim.num_classes), a.samples)
    rep = collusion_attack(colluders, victim, data.samples, AttackConfig("deepfool", epsilon=a.epsilon))
    out = _outdir(a.out)
    d = rep.as_dict()
    storage.write_csv(out / "collusion.csv", list(d), [list(d.values())])
    storage.write_json(out / "collusion.json", d)
    print(" ".join(f"{k} {storage.fmt_value(v)}" for k, v in d.items()))


def cmd_boundary_map(a):
    if a.fixture:
        if a.model or a.decoders:
            raise UsageError("--fixture cannot be combined with --model/--decoders")
        spec = OverlaySpec(resolution=a.resolution)
        master, d1, d2 = boundary_fixture(spec)
        out = _outdir(a.out)
        storage.save_model(master, out / "master.afrg")
        storage.save_decoder(d1, out / "copy1.dec")
        storage.save_decoder(d2, out / "copy2.dec")
    else:
        if not a.model or not a.decoders or len(a.decoders) != 2:
            raise UsageError("need --model and two --decoders, or --fixture")
        master = storage.load_model(a.model)
        d1, d2 = (storage.load_decoder(p) for p in a.decoders)
        out = _outdir(a.out)
    ov = overlay_models(master, d1, d2, a.resolution)
    storage.write_csv(out / "boundary_map.csv", OVERLAY_HEADER, ov.rows())
    agree1, agree2 = ov.master_agreement
    summary = {"resolution": a.resolution, "copies_differ": ov.copies_differ,
               "copy1_agrees_with_master": agree1, "copy2_agrees_with_master": agree2}
    storage.write_json(out / "boundary_map.json", summary)
    print(f"copies differ on {ov.copies_differ:.4f} of cells; agreement with master "
          f"{agree1:.4f} / {agree2:.4f}")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="copyshield", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="write seeded Gaussian-blob train/test CSV files")
    g.add_argument("--classes", type=int, default=3)
    g.add_argument("--dim", type=int, default=64)
    g.add_argument("--per-class", type=int, default=1000)
    g.add_argument("--test-count", type=int, default=1000)
    g.add_argument("--separation", type=float, default=6.0)
    g.add_argument("--pad", type=float, default=4.0)
    g.add_argument("--seed", type=int, required=True)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train a master copy from a CSV dataset")
    t.add_argument("--data", required=True)
    t.add_argument("--classes", type=int)
    t.add_argument("--seed", type=int, required=True)
    t.add_argument("--architecture", type=_ints)
    t.add_argument("--epochs", type=int, default=20)
    t.add_argument("--batch-size", type=int, default=32)
    t.add_argument("--learning-rate", type=float, default=0.01)
    t.add_argument("--momentum", type=float, default=0.9)
    t.add_argument("--out", required=True)
    t.set_defaults(func=cmd_train)

    i = sub.add_parser("inject", help="derive a seeded copy: decoder spec plus pieced-model reference")
    i.add_argument("--model", required=True)
    i.add_argument("--seed", type=int, required=True)
    i.add_argument("--kind", choices=("qim", "spread"), default="qim")
    i.add_argument("--projections", type=int, default=16)
    i.add_argument("--delta", type=float, default=0.5)
    i.add_argument("--gain", type=float, default=5.0)
    i.add_argument("--name")
    i.add_argument("--out-dir", required=True)
    i.set_defaults(func=cmd_inject)

    a = sub.add_parser("attack", help="attack a model on the correctly classified samples of a CSV")
    a.add_argument("--model", required=True)
    a.add_argument("--data", required=True)
    a.add_argument("--attack", choices=KINDS, required=True)
    a.add_argument("--epsilon", type=float, default=math.inf)
    a.add_argument("--steps", type=int)
    a.add_argument("--step-size", type=float)
    a.add_argument("--cw-c", type=float)
    a.add_argument("--rng-seed", type=int, default=0)
    a.add_argument("--samples", type=int)
    a.add_argument("--out", required=True)
    a.set_defaults(func=cmd_attack)

    e = sub.add_parser("evaluate", help="run an experiment config, or measure accuracy / replication")
    e.add_argument("--config")
    e.add_argument("--model")
    e.add_argument("--data")
    e.add_argument("--source")
    e.add_argument("--target")
    e.add_argument("--adversarial", help="output directory of an earlier 'attack' run")
    e.add_argument("--out")
    e.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("gradsim", help="cosine similarity of two models' loss gradients")
    s.add_argument("--a", required=True)
    s.add_argument("--b", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--samples", type=int)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_gradsim)

    c = sub.add_parser("collude", help="DeepFool on the average of several copies, replicated on a victim")
    c.add_argument("--colluders", nargs="+", required=True)
    c.add_argument("--victim", required=True)
    c.add_argument("--data", required=True)
    c.add_argument("--samples", type=int)
    c.add_argument("--epsilon", type=float, default=math.inf)
    c.add_argument("--out", required=True)
    c.set_defaults(func=cmd_collude)

    b = sub.add_parser("boundary-map", help="decision grids of a 2-D master and two injected copies")
    b.add_argument("--fixture", action="store_true", help="build the standard 2-D fixture")
    b.add_argument("--model")
    b.add_argument("--decoders", nargs="+")
    b.add_argument("--resolution", type=int, default=100)
    b.add_argument("--out", required=True)
    b.set_defaults(func=cmd_boundary_map)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except ConfigError as exc:
        print(f"copyshield: config error: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError, ArithmeticError, IndexError, KeyError) as exc:
        msg = str(exc).splitlines()[0] if str(exc) else type(exc).__name__
        if isinstance(exc, OSError) and exc.filename:
            msg = f"{exc.strerror}: {exc.filename}"
        print(f"copyshield: error: {msg}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
