"""Pure numpy fallback for ``_ckernels``.

Reductions use ``cumsum`` so the summation order is strictly sequential and
the results match the compiled kernels bit for bit; ``exp``/``log`` go
through :mod:`math` (the platform libm) for the same reason.
"""

from __future__ import annotations

import math

import numpy as np


def _seqdot(A: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Row-wise dot products ``A @ x`` summed left to right."""
    if A.shape[1] == 0:
        return np.zeros(A.shape[0])
    return np.cumsum(A * x, axis=-1)[..., -1] + 0.0


def _layers(params, dims, relu):
    off = 0
    for l in range(len(dims) - 1):
        nin, nout = int(dims[l]), int(dims[l + 1])
        W = params[off:off + nout * nin].reshape(nout, nin)
        b = params[off + nout * nin:off + nout * nin + nout]
        off += nout * nin + nout
        yield off - nout * nin - nout, W, b, bool(relu[l])


def _forward(params, dims, relu, x):
    acts = [np.asarray(x, dtype=np.float64)]
    pres = []
    for _, W, b, r in _layers(params, dims, relu):
        z = _seqdot(W, acts[-1]) + b
        pres.append(z)
        acts.append(np.where(z > 0.0, z, 0.0) if r else z)
    return pres, acts


def mlp_logits(params, dims, relu, x):
    return _forward(params, dims, relu, x)[1][-1].copy()


def mlp_jacobian(params, dims, relu, x):
    pres, acts = _forward(params, dims, relu, x)
    n = int(dims[-1])
    g = np.eye(n)
    layers = list(_layers(params, dims, relu))
    for l in range(len(layers) - 1, -1, -1):
        _, W, _, r = layers[l]
        if r:
            g = np.where(pres[l] > 0.0, g, 0.0)
        # g2[r, k] = sum_i g[r, i] * W[i, k], sequential over i
        g = np.cumsum(g[:, :, None] * W[None, :, :], axis=1)[:, -1, :] + 0.0
    return acts[-1].copy(), g


def mlp_batch_grads(params, dims, relu, X, y):
    layers = list(_layers(params, dims, relu))
    m = X.shape[0]
    contrib = np.zeros((m, params.shape[0]))
    loss = 0.0
    for s in range(m):
        pres, acts = _forward(params, dims, relu, X[s])
        z = acts[-1]
        zmax = z[0]
        for v in z[1:]:
            if v > zmax:
                zmax = v
        e = [math.exp(v - zmax) for v in z]
        tot = 0.0
        for v in e:
            tot += v
        p = np.array([v / tot for v in e])
        py = max(p[y[s]], 1e-12)
        loss += -math.log(py)
        d = p.copy()
        d[y[s]] = d[y[s]] - 1.0
        for l in range(len(layers) - 1, -1, -1):
            off, W, _, r = layers[l]
            if r:
                d = np.where(pres[l] > 0.0, d, 0.0)
            nout, nin = W.shape
            contrib[s, off:off + nout * nin] = np.outer(d, acts[l]).ravel()
            contrib[s, off + nout * nin:off + nout * nin + nout] = d
            if l > 0:
                d = np.cumsum(d[:, None] * W, axis=0)[-1] + 0.0
    grad = np.cumsum(contrib, axis=0)[-1] + 0.0
    return loss / m, grad / m


def _round_away(t):
    t = np.asarray(t, dtype=np.float64)
    whole = np.trunc(t)
    frac = t - whole
    return whole + np.where(frac >= 0.5, 1.0, 0.0) - np.where(frac <= -0.5, 1.0, 0.0)


def _residual(y, delta):
    v = y + delta / 2.0 - _round_away(y / delta + 0.5) * delta
    return np.abs(v), np.sign(v)


def quant_residual(y, delta):
    return float(_residual(float(y), float(delta))[0])


def qim_response(P, alpha, delta, n, B, x, jac):
    asum = 0.0
    for a in alpha:
        asum += float(a)
    emax = delta / 2.0 * asum
    proj = _seqdot(P, x).reshape(n, B)
    res, sgn = _residual(proj, delta)
    tot = np.cumsum(alpha[None, :] * res, axis=1)[:, -1]
    e = np.clip(1.0 - tot / emax, 0.0, 1.0)
    if not jac:
        return e, None
    c = -(alpha[None, :] * sgn) / emax
    terms = c[:, :, None] * P.reshape(n, B, -1)
    J = np.cumsum(terms, axis=1)[:, -1, :]
    return e, J + 0.0


def ss_response(M, gain, x):
    return gain * _seqdot(M, x)
