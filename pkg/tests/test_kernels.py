import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import random_model
from copyshield import kernels
from copyshield.attractors import gen_qim

C = kernels.compiled_backend
P = kernels.python_backend
needs_ext = pytest.mark.skipif(C is None, reason="compiled extension not built")


def same_bits(a, b):
    if isinstance(a, tuple):
        return len(a) == len(b) and all(same_bits(u, v) for u, v in zip(a, b))
    if a is None or b is None:
        return a is b
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    return a.shape == b.shape and a.tobytes() == b.tobytes()


def args_of(m):
    return m.flat_params, m._dims, m._relu


@needs_ext
@given(st.integers(0, 10_000), st.lists(st.integers(1, 9), min_size=1, max_size=3))
def test_mlp_kernels_bit_identical(seed, hidden):
    widths = (5, *hidden, 3)
    m = random_model(widths, seed=seed, scale=2.0)
    x = np.random.default_rng(seed).uniform(0, 1, 5)
    for name in ("mlp_logits", "mlp_jacobian"):
        assert same_bits(getattr(C, name)(*args_of(m), x), getattr(P, name)(*args_of(m), x))


@needs_ext
@given(st.integers(0, 10_000), st.integers(1, 12))
def test_batch_grads_bit_identical(seed, rows):
    m = random_model((4, 6, 3), seed=seed)
    rng = np.random.default_rng(seed)
    X = rng.uniform(0, 1, (rows, 4))
    y = rng.integers(0, 3, rows).astype(np.int64)
    assert same_bits(C.mlp_batch_grads(*args_of(m), X, y), P.mlp_batch_grads(*args_of(m), X, y))


@needs_ext
@given(st.floats(-50, 50, allow_nan=False), st.floats(0.01, 3.0))
def test_quant_residual_bit_identical(y, delta):
    assert same_bits(C.quant_residual(y, delta), P.quant_residual(y, delta))


@needs_ext
@given(st.integers(0, 10_000), st.booleans())
def test_qim_and_spread_bit_identical(seed, jac):
    dec = gen_qim(seed, 3, 8, projections=4, delta=0.3)
    x = np.random.default_rng(seed).uniform(0, 1, 8)
    a = np.array(dec.alpha)
    assert same_bits(C.qim_response(dec.messages, a, dec.delta, 3, 4, x, jac),
                     P.qim_response(dec.messages, a, dec.delta, 3, 4, x, jac))
    M = dec.messages[:3].copy()
    assert same_bits(C.ss_response(M, 5.0, x), P.ss_response(M, 5.0, x))


@needs_ext
def test_exact_lattice_ties_agree():
    # y / delta + 1/2 exactly half-integral: both backends must round away from zero
    for y in (-1.0, -0.5, 0.0, 0.5, 1.0, 2.5):
        assert C.quant_residual(y, 0.5) == P.quant_residual(y, 0.5)


def _backend_in_subprocess(env_value):
    env = dict(os.environ)
    env.pop("COPYSHIELD_PURE_PYTHON", None)
    if env_value is not None:
        env["COPYSHIELD_PURE_PYTHON"] = env_value
    out = subprocess.run([sys.executable, "-c", "from copyshield import kernels; print(kernels.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    return out.stdout.strip()


def test_environment_forces_fallback():
    assert _backend_in_subprocess("1") == "python"


@needs_ext
def test_compiled_backend_preferred():
    assert _backend_in_subprocess(None) == "cython"
