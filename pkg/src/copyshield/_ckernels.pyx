# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels for dense ReLU nets and watermark decoders.

All reductions run sequentially in index order (acc = 0.0; acc += ...), so
results are bit-identical to the numpy fallback in ``_pykernels``.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log, fabs, round as c_round

cnp.import_array()


cdef inline Py_ssize_t _max_width(const int[::1] dims):
    cdef Py_ssize_t i, m = 0
    for i in range(dims.shape[0]):
        if dims[i] > m:
            m = dims[i]
    return m


cdef Py_ssize_t _forward(const double[::1] params, const int[::1] dims,
                         const unsigned char[::1] relu, const double[::1] x,
                         double[:, ::1] pre, double[:, ::1] act):
    """Fill act[0] with x and act[l+1]/pre[l] for every layer; return n."""
    cdef Py_ssize_t L = dims.shape[0] - 1
    cdef Py_ssize_t l, i, k, nin, nout, off = 0
    cdef double acc
    for k in range(dims[0]):
        act[0, k] = x[k]
    for l in range(L):
        nin = dims[l]
        nout = dims[l + 1]
        for i in range(nout):
            acc = 0.0
            for k in range(nin):
                acc += params[off + i * nin + k] * act[l, k]
            acc = acc + params[off + nout * nin + i]
            pre[l, i] = acc
            if relu[l] and not (acc > 0.0):
                act[l + 1, i] = 0.0
            else:
                act[l + 1, i] = acc
        off += nout * nin + nout
    return dims[L]


def mlp_logits(const double[::1] params, const int[::1] dims,
               const unsigned char[::1] relu, const double[::1] x):
    cdef Py_ssize_t L = dims.shape[0] - 1
    cdef Py_ssize_t w = _max_width(dims)
    pre = np.empty((L, w))
    act = np.empty((L + 1, w))
    cdef Py_ssize_t n = _forward(params, dims, relu, x, pre, act)
    return act[L, :n].copy()


def mlp_jacobian(const double[::1] params, const int[::1] dims,
                 const unsigned char[::1] relu, const double[::1] x):
    """Logits and their Jacobian (n x l) with respect to the input."""
    cdef Py_ssize_t L = dims.shape[0] - 1
    cdef Py_ssize_t w = _max_width(dims)
    cdef double[:, ::1] pre = np.empty((L, w))
    cdef double[:, ::1] act = np.empty((L + 1, w))
    cdef Py_ssize_t n = _forward(params, dims, relu, x, pre, act)
    cdef double[:, ::1] g = np.zeros((n, w))
    cdef double[:, ::1] g2 = np.empty((n, w))
    cdef double[:, ::1] tmp
    cdef Py_ssize_t l, i, k, r, nin, nout, off
    cdef Py_ssize_t[::1] offs = np.empty(L, dtype=np.intp)
    cdef double acc
    off = 0
    for l in range(L):
        offs[l] = off
        off += dims[l + 1] * dims[l] + dims[l + 1]
    for r in range(n):
        g[r, r] = 1.0
    for l in range(L - 1, -1, -1):
        nin = dims[l]
        nout = dims[l + 1]
        off = offs[l]
        if relu[l]:
            for r in range(n):
                for i in range(nout):
                    if not (pre[l, i] > 0.0):
                        g[r, i] = 0.0
        for r in range(n):
            for k in range(nin):
                acc = 0.0
                for i in range(nout):
                    acc += g[r, i] * params[off + i * nin + k]
                g2[r, k] = acc
        tmp = g
        g = g2
        g2 = tmp
    z = np.asarray(act[L, :n]).copy()
    J = np.asarray(g[:, :dims[0]]).copy()
    return z, J


def mlp_batch_grads(const double[::1] params, const int[::1] dims,
                    const unsigned char[::1] relu, const double[:, ::1] X,
                    const long[::1] y):
    """Mean cross-entropy and its gradient over a batch, flat like params."""
    cdef Py_ssize_t L = dims.shape[0] - 1
    cdef Py_ssize_t w = _max_width(dims)
    cdef Py_ssize_t m = X.shape[0]
    cdef Py_ssize_t n = dims[L]
    cdef double[:, ::1] pre = np.empty((L, w))
    cdef double[:, ::1] act = np.empty((L + 1, w))
    cdef double[::1] d = np.empty(w)
    cdef double[::1] d2 = np.empty(w)
    cdef double[::1] tmpv
    cdef double[::1] grad = np.zeros(params.shape[0])
    cdef double[::1] p = np.empty(n)
    cdef Py_ssize_t[::1] offs = np.empty(L, dtype=np.intp)
    cdef Py_ssize_t s, l, i, k, nin, nout, off
    cdef double zmax, tot, acc, py, loss = 0.0
    off = 0
    for l in range(L):
        offs[l] = off
        off += dims[l + 1] * dims[l] + dims[l + 1]
    for s in range(m):
        _forward(params, dims, relu, X[s], pre, act)
        zmax = act[L, 0]
        for i in range(1, n):
            if act[L, i] > zmax:
                zmax = act[L, i]
        tot = 0.0
        for i in range(n):
            p[i] = exp(act[L, i] - zmax)
            tot += p[i]
        for i in range(n):
            p[i] = p[i] / tot
        py = p[y[s]]
        if py < 1e-12:
            py = 1e-12
        loss += -log(py)
        for i in range(n):
            d[i] = p[i]
        d[y[s]] = d[y[s]] - 1.0
        for l in range(L - 1, -1, -1):
            nin = dims[l]
            nout = dims[l + 1]
            off = offs[l]
            if relu[l]:
                for i in range(nout):
                    if not (pre[l, i] > 0.0):
                        d[i] = 0.0
            for i in range(nout):
                for k in range(nin):
                    grad[off + i * nin + k] += d[i] * act[l, k]
                grad[off + nout * nin + i] += d[i]
            if l > 0:
                for k in range(nin):
                    acc = 0.0
                    for i in range(nout):
                        acc += d[i] * params[off + i * nin + k]
                    d2[k] = acc
                tmpv = d
                d = d2
                d2 = tmpv
    out = np.asarray(grad)
    for i in range(out.shape[0]):
        grad[i] = grad[i] / m
    return loss / m, out


cdef inline double _residual(double y, double delta, double* sgn):
    cdef double v = y + delta / 2.0 - c_round(y / delta + 0.5) * delta
    if v > 0.0:
        sgn[0] = 1.0
    elif v < 0.0:
        sgn[0] = -1.0
    else:
        sgn[0] = 0.0
    return fabs(v)


def quant_residual(double y, double delta):
    cdef double s
    return _residual(y, delta, &s)


def qim_response(const double[:, ::1] P, const double[::1] alpha, double delta,
                 Py_ssize_t n, Py_ssize_t B, const double[::1] x, bint jac):
    """Responses e_j and, if ``jac``, their Jacobian (n x l)."""
    cdef Py_ssize_t ell = P.shape[1]
    cdef Py_ssize_t j, h, k, row
    cdef double asum = 0.0, emax, y, acc, s, tot, c
    for h in range(B):
        asum += alpha[h]
    emax = delta / 2.0 * asum
    cdef double[::1] e = np.empty(n)
    cdef double[:, ::1] J
    if jac:
        J = np.zeros((n, ell))
    for j in range(n):
        tot = 0.0
        for h in range(B):
            row = j * B + h
            acc = 0.0
            for k in range(ell):
                acc += P[row, k] * x[k]
            tot += alpha[h] * _residual(acc, delta, &s)
            if jac and s != 0.0:
                c = -(alpha[h] * s) / emax
                for k in range(ell):
                    J[j, k] += c * P[row, k]
        y = 1.0 - tot / emax
        if y < 0.0:
            y = 0.0
        elif y > 1.0:
            y = 1.0
        e[j] = y
    if jac:
        return np.asarray(e), np.asarray(J)
    return np.asarray(e), None


def ss_response(const double[:, ::1] M, double gain, const double[::1] x):
    cdef Py_ssize_t n = M.shape[0], ell = M.shape[1], j, k
    cdef double acc
    cdef double[::1] c = np.empty(n)
    for j in range(n):
        acc = 0.0
        for k in range(ell):
            acc += M[j, k] * x[k]
        c[j] = gain * acc
    return np.asarray(c)
