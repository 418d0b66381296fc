"""Pure numpy versions of the compiled kernels in ``_ckernels.pyx``.

Same signatures and array layouts; used when the extension is not built or
when ``GII_PURE_PYTHON=1`` is set.
"""
import numpy as np
from scipy.special import ndtr

Z_HI = 37.0  # 1/(1+exp(-37)) rounds to 1.0
Z_LO = -700.0


def _kernel(z, family):
    if family == 0:
        return 1.0 / (1.0 + np.exp(-np.clip(z, Z_LO, Z_HI)))
    return ndtr(z)


def smooth_binary(x, eta, b1, b2, r, lam, nested, family):
    M, T, n = eta.shape
    y = np.empty((M, T, n))
    eps = np.zeros((M, n))
    prev = np.zeros((M, n))
    inv = 0.0 if lam == 0.0 else 1.0 / lam
    for t in range(T):
        eps = r * eps + eta[:, t, :]
        v0 = b1 * x[t] + eps
        if lam == 0.0:
            cur = (v0 + b2 * prev > 0.0).astype(float)
        elif b2 == 0.0:
            cur = _kernel(v0 * inv, family)
        elif nested:
            cur = _kernel((v0 + b2 * prev) * inv, family)
        else:
            k1 = _kernel((v0 + b2) * inv, family)
            k0 = _kernel(v0 * inv, family)
            cur = k0 * (1.0 - prev) + k1 * prev
        y[:, t, :] = cur
        prev = cur
    return y


def smooth_trinomial(x, eta, b10, b11, b12, b20, b21, b22, c1, c2, lam, family):
    e1, e2 = eta[:, 0], eta[:, 1]
    u1 = b10 + b11 * x[0] + b12 * x[1] + e1
    u2 = b20 + b21 * x[0] + b22 * x[2] + c1 * e1 + c2 * e2
    if lam == 0.0:
        y1 = ((u1 > u2) & (u1 > 0.0)).astype(float)
        y2 = ((u2 > u1) & (u2 > 0.0)).astype(float)
    elif family == 0:
        top = np.maximum(np.maximum(u1, u2), 0.0)
        ex0 = np.exp(np.maximum(-top / lam, Z_LO))
        ex1 = np.exp(np.maximum((u1 - top) / lam, Z_LO))
        ex2 = np.exp(np.maximum((u2 - top) / lam, Z_LO))
        tot = ex0 + ex1 + ex2
        y1, y2 = ex1 / tot, ex2 / tot
    else:
        d = (u1 - u2) / lam
        y1 = ndtr(d) * ndtr(u1 / lam)
        y2 = ndtr(-d) * ndtr(u2 / lam)
    return np.stack([y1, y2], axis=1)


def smooth_selection(x, eta, b10, b11, b20, b21, b22, c1, c2, lam, family):
    e1, e2 = eta[:, 0], eta[:, 1]
    w = b10 + b11 * x[0] + c1 * e1 + c2 * e2
    u = b20 + b21 * x[1] + b22 * w + e2
    if lam == 0.0:
        k = (u > 0.0).astype(float)
    else:
        k = _kernel(u / lam, family)
    return np.stack([k, w * k], axis=1)


def pair_dots(X, Y, pairs, out):
    kx, C = X.shape[0], Y.shape[1]
    pairs = np.asarray(pairs)
    G = np.zeros((Y.shape[0], kx + C, kx + C))
    xy = np.matmul(Y, X.T)                      # (M, C, kx)
    G[:, kx:, :kx] = xy
    G[:, :kx, kx:] = xy.transpose(0, 2, 1)
    G[:, kx:, kx:] = np.matmul(Y, Y.transpose(0, 2, 1))
    G[:, :kx, :kx] = X @ X.T
    out[:] = G[:, pairs[:, 0], pairs[:, 1]]
