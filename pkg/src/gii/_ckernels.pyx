# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled inner loops: smoothed binary-choice recursions and batched moment sums.

Array layouts are period-major with individuals contiguous, so every inner
loop runs over ``i`` with unit stride and can be vectorized.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp, erfc

cnp.import_array()

# 1/(1+exp(-37)) == 1.0 in double precision; the lower clamp only avoids inf.
cdef double Z_HI = 37.0
cdef double Z_LO = -700.0
cdef double SQRT1_2 = 0.70710678118654752440


cdef void _logistic(const double* v, double shift, double inv, double* out,
                    Py_ssize_t n) noexcept nogil:
    cdef Py_ssize_t i
    cdef double z
    for i in range(n):
        z = (v[i] + shift) * inv
        z = Z_HI if z > Z_HI else z
        z = Z_LO if z < Z_LO else z
        out[i] = 1.0 / (1.0 + exp(-z))


cdef void _normal_cdf(const double* v, double shift, double inv, double* out,
                      Py_ssize_t n) noexcept nogil:
    cdef Py_ssize_t i
    for i in range(n):
        out[i] = 0.5 * erfc(-(v[i] + shift) * inv * SQRT1_2)


cdef inline void _apply(const double* v, double shift, double inv, double* out,
                        Py_ssize_t n, int family) noexcept nogil:
    if family == 0:
        _logistic(v, shift, inv, out, n)
    else:
        _normal_cdf(v, shift, inv, out, n)


def smooth_binary(const double[:, ::1] x, const double[:, :, ::1] eta,
                  double b1, double b2, double r, double lam,
                  int nested, int family):
    """Smoothed choices for the binary dynamic probit family.

    x: (T, n) covariate; eta: (M, T, n) shocks. Returns y with shape (M, T, n).
    ``lam == 0`` gives hard indicators with ties resolved to 0.
    """
    cdef Py_ssize_t M = eta.shape[0], T = eta.shape[1], n = eta.shape[2]
    cdef Py_ssize_t m, t, i
    cdef double inv = 0.0 if lam == 0.0 else 1.0 / lam
    out = np.empty((M, T, n), dtype=np.float64)
    cdef double[:, :, ::1] y = out
    work = np.zeros((4, n), dtype=np.float64)
    cdef double[:, ::1] w = work
    cdef double* eps = &w[0, 0]
    cdef double* v = &w[1, 0]
    cdef double* k1 = &w[2, 0]
    cdef double* z = &w[3, 0]
    cdef double* cur
    cdef const double* prev
    cdef const double* e
    cdef const double* xt
    cdef bint static = b2 == 0.0
    if M == 0 or T == 0 or n == 0:
        return out
    with nogil:
        for m in range(M):
            for i in range(n):
                eps[i] = 0.0
            for t in range(T):
                e = &eta[m, t, 0]
                xt = &x[t, 0]
                cur = &y[m, t, 0]
                for i in range(n):
                    eps[i] = r * eps[i] + e[i]
                    v[i] = b1 * xt[i] + eps[i]
                if t > 0:
                    prev = &y[m, t - 1, 0]
                else:
                    for i in range(n):
                        z[i] = 0.0
                    prev = z
                if lam == 0.0:
                    for i in range(n):
                        cur[i] = 1.0 if v[i] + b2 * prev[i] > 0.0 else 0.0
                elif static:
                    _apply(v, 0.0, inv, cur, n, family)
                elif nested:
                    for i in range(n):
                        k1[i] = v[i] + b2 * prev[i]
                    _apply(k1, 0.0, inv, cur, n, family)
                else:
                    _apply(v, b2, inv, k1, n, family)
                    _apply(v, 0.0, inv, cur, n, family)
                    for i in range(n):
                        cur[i] = cur[i] * (1.0 - prev[i]) + k1[i] * prev[i]
    return out


cdef void _exp_clamped(double* v, Py_ssize_t n) noexcept nogil:
    cdef Py_ssize_t i
    cdef double z
    for i in range(n):
        z = v[i]
        z = Z_LO if z < Z_LO else z
        v[i] = exp(z)


cdef void _linear(const double* h1, const double* h2, const double* x1,
                  const double* x2, const double* x3, double a0, double a1,
                  double a2, double g1, double g2, double* out,
                  Py_ssize_t n) noexcept nogil:
    # out = a0 + a1 x1 + a2 x2 + g1 h1 + g2 h2
    cdef Py_ssize_t i
    for i in range(n):
        out[i] = a0 + a1 * x1[i] + a2 * x2[i] + g1 * h1[i] + g2 * h2[i]


def smooth_trinomial(const double[:, ::1] x, const double[:, :, ::1] eta,
                     double b10, double b11, double b12, double b20, double b21,
                     double b22, double c1, double c2, double lam, int family):
    """Smoothed shares of alternatives 1 and 2 against an outside option at 0.

    x: (3, n) covariates; eta: (M, 2, n) shocks.  Returns (M, 2, n).  The
    logistic family is a softmax over (u1, u2, 0) with temperature lam; the
    Gaussian family uses Phi((u1-u2)/lam) Phi(u1/lam) and its mirror.
    """
    cdef Py_ssize_t M = eta.shape[0], n = eta.shape[2]
    cdef Py_ssize_t m, i
    cdef double inv = 0.0 if lam == 0.0 else 1.0 / lam
    cdef double top, tot, d, p, q
    out = np.empty((M, 2, n), dtype=np.float64)
    work = np.empty((3, n), dtype=np.float64)
    cdef double[:, :, ::1] y = out
    cdef double[:, ::1] wk = work
    cdef const double* x1 = &x[0, 0]
    cdef const double* x2 = &x[1, 0]
    cdef const double* x3 = &x[2, 0]
    cdef const double* h1
    cdef const double* h2
    cdef double* y1
    cdef double* y2
    cdef double* e0
    if M == 0 or n == 0:
        return out
    e0 = &wk[0, 0]
    with nogil:
        for m in range(M):
            h1 = &eta[m, 0, 0]
            h2 = &eta[m, 1, 0]
            y1 = &y[m, 0, 0]
            y2 = &y[m, 1, 0]
            # y1, y2 hold u1, u2 until overwritten
            _linear(h1, h2, x1, x2, x2, b10, b11, b12, 1.0, 0.0, y1, n)
            _linear(h1, h2, x1, x3, x3, b20, b21, b22, c1, c2, y2, n)
            if lam == 0.0:
                for i in range(n):
                    p = y1[i]
                    q = y2[i]
                    y1[i] = 1.0 if (p > q and p > 0.0) else 0.0
                    y2[i] = 1.0 if (q > p and q > 0.0) else 0.0
            elif family == 0:
                for i in range(n):
                    p = y1[i]
                    q = y2[i]
                    top = p if p > q else q
                    top = top if top > 0.0 else 0.0
                    e0[i] = -top * inv
                    y1[i] = (p - top) * inv
                    y2[i] = (q - top) * inv
                _exp_clamped(e0, n)
                _exp_clamped(y1, n)
                _exp_clamped(y2, n)
                for i in range(n):
                    tot = 1.0 / (e0[i] + y1[i] + y2[i])
                    y1[i] = y1[i] * tot
                    y2[i] = y2[i] * tot
            else:
                for i in range(n):
                    p = y1[i]
                    q = y2[i]
                    d = (p - q) * inv * SQRT1_2
                    y1[i] = 0.25 * erfc(-d) * erfc(-p * inv * SQRT1_2)
                    y2[i] = 0.25 * erfc(d) * erfc(-q * inv * SQRT1_2)
    return out


def smooth_selection(const double[:, ::1] x, const double[:, :, ::1] eta,
                     double b10, double b11, double b20, double b21, double b22,
                     double c1, double c2, double lam, int family):
    """Work share K(u/lam) and wage times share for the selection model.

    x: (2, n); eta: (M, 2, n).  Returns (M, 2, n) holding (K, w K).
    """
    cdef Py_ssize_t M = eta.shape[0], n = eta.shape[2]
    cdef Py_ssize_t m, i
    cdef double inv = 0.0 if lam == 0.0 else 1.0 / lam
    out = np.empty((M, 2, n), dtype=np.float64)
    cdef double[:, :, ::1] y = out
    cdef const double* x1 = &x[0, 0]
    cdef const double* x2 = &x[1, 0]
    cdef const double* h1
    cdef const double* h2
    cdef double* y1
    cdef double* y2
    if M == 0 or n == 0:
        return out
    with nogil:
        for m in range(M):
            h1 = &eta[m, 0, 0]
            h2 = &eta[m, 1, 0]
            y1 = &y[m, 0, 0]
            y2 = &y[m, 1, 0]
            # y2 <- wage index w, y1 <- participation index u
            _linear(h1, h2, x1, x1, x1, b10, b11, 0.0, c1, c2, y2, n)
            _linear(h2, y2, x2, x2, x2, b20, b21, 0.0, 1.0, b22, y1, n)
            if lam == 0.0:
                for i in range(n):
                    y1[i] = 1.0 if y1[i] > 0.0 else 0.0
            else:
                _apply(y1, 0.0, inv, y1, n, family)
            for i in range(n):
                y2[i] = y2[i] * y1[i]
    return out


cdef double _dot(const double* a, const double* b, Py_ssize_t n) noexcept nogil:
    cdef Py_ssize_t i
    cdef double acc = 0.0
    for i in range(n):
        acc += a[i] * b[i]
    return acc


def pair_dots(const double[:, ::1] X, const double[:, :, ::1] Y,
              const Py_ssize_t[:, ::1] pairs, double[:, ::1] out):
    """Inner products over individuals for selected row pairs, per batch member.

    Rows are numbered with the kx covariate rows of X first, then the C
    outcome columns of Y[m].  ``out[m, p]`` receives the dot product of rows
    pairs[p, 0] and pairs[p, 1].  Each Y[m] is visited once, so it stays in
    cache while all its pairs are formed.
    """
    cdef Py_ssize_t M = Y.shape[0], n = Y.shape[2]
    cdef Py_ssize_t kx = X.shape[0], P = pairs.shape[0]
    cdef Py_ssize_t m, p, a, b
    cdef const double* ra
    cdef const double* rb
    if n == 0:
        out[:, :] = 0.0
        return
    with nogil:
        for m in range(M):
            for p in range(P):
                a = pairs[p, 0]
                b = pairs[p, 1]
                ra = &X[a, 0] if a < kx else &Y[m, a - kx, 0]
                rb = &X[b, 0] if b < kx else &Y[m, b - kx, 0]
                out[m, p] = _dot(ra, rb, n)
