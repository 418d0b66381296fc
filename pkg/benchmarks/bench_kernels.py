"""Compare the compiled and numpy kernel backends on the hot paths.

    python benchmarks/bench_kernels.py [--M 300] [--n 1000] [--T 5] [--repeat 5]

Reports the best-of-``repeat`` wall time per call and the max absolute
difference between the two backends' outputs.
"""
import argparse
import time

import numpy as np

from gii import _pykernels
from gii import auxiliary as aux
from gii.models import StructuralConfig, draw_shocks

try:
    from gii import _ckernels
except ImportError:
    _ckernels = None


def best_time(fn, repeat):
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def cases(M, n, T):
    rng = np.random.default_rng(0)
    x = rng.standard_normal((T, n))
    eta = rng.standard_normal((M, T, n))
    x3 = rng.standard_normal((3, 2 * n))
    eta2 = rng.standard_normal((M, 2, 2 * n))

    # pair_dots on the M1 aux #3 design
    cfg = StructuralConfig("M1", [1.0, 0.4], n=n, T=T)
    sh = draw_shocks(cfg, 0, 1)
    design = aux.AuxiliaryDesign(aux.make_spec("M1", "#3", T), sh.x)
    Y = np.ascontiguousarray(rng.uniform(size=(M, T, n)))
    P = design.pairs.shape[0]

    return {
        "smooth_binary lam=0.03 (M2)": lambda k: k.smooth_binary(x, eta, 1.0, 0.2, 0.4, 0.03, 0, 0),
        "smooth_binary lam=0.003 (M2)": lambda k: k.smooth_binary(x, eta, 1.0, 0.2, 0.4, 0.003, 0, 0),
        "smooth_binary static (M1)": lambda k: k.smooth_binary(x, eta, 1.0, 0.0, 0.4, 0.03, 0, 0),
        "smooth_trinomial lam=0.03 (M4)": lambda k: k.smooth_trinomial(
            x3, eta2, 0, 1, 1, 0, 1, 1, 0, 1, 0.03, 0),
        "smooth_selection lam=0.03 (M5)": lambda k: k.smooth_selection(
            x3[:2], eta2, 0, 1, 0, 1, 1, 0.5, 1, 0.03, 0),
        f"pair_dots P={P} (M1 aux #3)": lambda k: _pair(k, design.X, Y, design.pairs, M, P),
    }


def _pair(k, X, Y, pairs, M, P):
    out = np.empty((M, P))
    k.pair_dots(X, Y, pairs, out)
    return out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--M", type=int, default=300)
    ap.add_argument("--n", type=int, default=1000)
    ap.add_argument("--T", type=int, default=5)
    ap.add_argument("--repeat", type=int, default=5)
    a = ap.parse_args(argv)
    if _ckernels is None:
        print("compiled extension not built; only the numpy backend is available")
    print(f"M={a.M} n={a.n} T={a.T}, best of {a.repeat}")
    print(f"{'kernel':34s} {'numpy ms':>10s} {'cython ms':>10s} {'speedup':>8s} {'max diff':>10s}")
    for name, fn in cases(a.M, a.n, a.T).items():
        tp, op = best_time(lambda: fn(_pykernels), a.repeat)
        if _ckernels is None:
            print(f"{name:34s} {1e3 * tp:10.2f}")
            continue
        tc, oc = best_time(lambda: fn(_ckernels), a.repeat)
        diff = float(np.max(np.abs(op - oc)))
        print(f"{name:34s} {1e3 * tp:10.2f} {1e3 * tc:10.2f} {tp / tc:8.1f} {diff:10.2e}")


if __name__ == "__main__":
    main()
