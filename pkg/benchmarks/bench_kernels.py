"""Time the compiled kernels against the numpy fallback.

    python benchmarks/bench_kernels.py [--repeat N]

Also checks that both backends return bit-identical results on the inputs
being timed.
"""

import argparse
import sys
import timeit

import numpy as np

from copyshield import kernels
from copyshield.attractors import gen_qim
from copyshield.data import SyntheticSpec, gen_synthetic_dataset
from copyshield.training import init_model


def cases():
    model = init_model((64, 32, 3), seed=1)
    args = (model.flat_params, model._dims, model._relu)
    train, _ = gen_synthetic_dataset(SyntheticSpec(3, 64, 32, 6.0, 7, test_count=3))
    X, y = train.X, train.y
    x = X[0]
    dec = gen_qim(11, 3, 64)
    qargs = (dec.messages, np.array(dec.alpha), dec.delta, 3, dec.projections, x, True)
    return {
        "mlp_logits": ("mlp_logits", args + (x,)),
        "mlp_jacobian": ("mlp_jacobian", args + (x,)),
        "mlp_batch_grads (32 rows)": ("mlp_batch_grads", args + (X[:32], y[:32])),
        "qim_response + jacobian": ("qim_response", qargs),
        "ss_response": ("ss_response", (dec.messages[:3], 5.0, x)),
    }


def _same(a, b):
    if isinstance(a, tuple):
        return all(_same(u, v) for u, v in zip(a, b))
    if a is None or b is None:
        return a is b
    return np.array_equal(np.asarray(a), np.asarray(b))


def main(argv=None):
    p = argparse.ArgumentParser()
    p.add_argument("--repeat", type=int, default=2000)
    a = p.parse_args(argv)
    if kernels.compiled_backend is None:
        print("compiled extension not built; only the numpy fallback is available")
        return 1
    print(f"{'kernel':28s} {'compiled us':>12s} {'numpy us':>12s} {'speedup':>8s}  identical")
    for label, (name, args) in cases().items():
        fc = getattr(kernels.compiled_backend, name)
        fp = getattr(kernels.python_backend, name)
        tc = min(timeit.repeat(lambda: fc(*args), number=a.repeat, repeat=3)) / a.repeat * 1e6
        tp = min(timeit.repeat(lambda: fp(*args), number=a.repeat, repeat=3)) / a.repeat * 1e6
        print(f"{label:28s} {tc:12.2f} {tp:12.2f} {tp / tc:8.1f}  {_same(fc(*args), fp(*args))}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
