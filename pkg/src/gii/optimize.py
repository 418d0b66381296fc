"""Derivative-based minimizers: Gauss-Newton, BFGS with a strong Wolfe line
search, and a Moré-Sorensen trust region with a second-order stopping test.

An objective is any object with ``value(beta)`` and ``grad(beta)``.  The
trust region also needs ``hess(beta)``; Gauss-Newton needs ``residual(beta)``
and ``jacobian(beta)`` with value = |residual|^2.  An optional
``feasible_box()`` returns (lower, upper) and steps are capped to stay
inside it.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

ROUTINES = ("GN", "QN_BFGS", "TR")


class LineSearchError(RuntimeError):
    pass


@dataclass
class OptimizerConfig:
    routine: str = "QN_BFGS"
    c1: float = 1e-4
    c2: float | None = None        # 0.9 for QN, 0.1 for GN
    grad_tol: float | None = None  # default 1e-6 * max(1, |Q(beta0)|)
    max_iter: int = 200
    ls_max_iter: int = 40
    tr_init_radius: float = 1.0
    tr_eta_accept: float = 0.1
    eig_tol: float = 1e-6
    check_second_order: bool = False
    init_hessian: str = "fd"       # "fd" or "identity" for QN

    def __post_init__(self):
        if self.routine not in ROUTINES:
            raise ValueError(f"routine must be one of {ROUTINES}")
        if self.c2 is None:
            self.c2 = 0.1 if self.routine == "GN" else 0.9
        if not 0.0 < self.c1 < self.c2 < 1.0:
            raise ValueError("need 0 < c1 < c2 < 1")
        if self.grad_tol is not None and not self.grad_tol > 0:
            raise ValueError("grad_tol must be positive")
        if self.routine == "TR":
            self.check_second_order = True


@dataclass
class OptTrace:
    iterates: list = field(default_factory=list)
    values: list = field(default_factory=list)
    grad_norms: list = field(default_factory=list)
    steps: list = field(default_factory=list)
    reason: str = ""
    min_eig: float | None = None

    def record(self, beta, f, gnorm, step):
        self.iterates.append(np.array(beta, dtype=float))
        self.values.append(float(f))
        self.grad_norms.append(float(gnorm))
        self.steps.append(step)

    def to_jsonl(self):
        lines = []
        for b, f, g, s in zip(self.iterates, self.values, self.grad_norms, self.steps):
            lines.append(json.dumps({"beta": [float(v) for v in b], "value": f,
                                     "grad_norm": g, "step": s}))
        lines.append(json.dumps({"reason": self.reason, "min_eig": self.min_eig}))
        return "\n".join(lines) + "\n"


@dataclass
class OptResult:
    beta: np.ndarray
    value: float
    grad: np.ndarray
    reason: str
    n_iter: int
    trace: OptTrace
    hess_approx: np.ndarray | None = None

    @property
    def converged(self):
        return self.reason in ("near_root", "near_root_second_order")


# ---------------------------------------------------------------------------
# line search

def _cubic_min(a, fa, da, b, fb, db):
    """Minimizer of the cubic interpolating f and f' at a and b, or None."""
    d1 = da + db - 3.0 * (fa - fb) / (a - b)
    rad = d1 * d1 - da * db
    if rad < 0:
        return None
    d2 = math.copysign(math.sqrt(rad), b - a)
    den = db - da + 2.0 * d2
    if den == 0:
        return None
    return b - (b - a) * (db + d2 - d1) / den


def wolfe_line_search(fg, phi0, dphi0, alpha0=1.0, c1=1e-4, c2=0.9,
                      alpha_max=np.inf, max_iter=40):
    """Step length satisfying the strong Wolfe conditions.

    ``fg(alpha)`` returns (phi(alpha), phi'(alpha)).  Returns
    (alpha, phi, dphi).  Raises LineSearchError if phi'(0) >= 0 or if no
    acceptable step is found within ``max_iter`` evaluations.
    """
    if not dphi0 < 0:
        raise LineSearchError("not a descent direction")
    budget = [max_iter]

    def ev(a):
        if budget[0] <= 0:
            raise LineSearchError("line search evaluation budget exhausted")
        budget[0] -= 1
        try:
            f, d = fg(a)
        except (ValueError, ArithmeticError, np.linalg.LinAlgError):
            return np.inf, np.nan
        if not np.isfinite(f):
            return np.inf, np.nan
        return float(f), float(d)

    def zoom(lo, flo, dlo, hi, fhi, dhi):
        while True:
            width = hi - lo
            a = None
            if np.isfinite(fhi) and np.isfinite(dhi):
                a = _cubic_min(lo, flo, dlo, hi, fhi, dhi)
            if a is None or not (min(lo, hi) + 0.1 * abs(width) <= a
                                 <= max(lo, hi) - 0.1 * abs(width)):
                a = lo + 0.5 * width
            if abs(width) < 1e-16 * max(1.0, abs(lo)):
                raise LineSearchError("line search interval collapsed")
            f, d = ev(a)
            if f > phi0 + c1 * a * dphi0 or f >= flo:
                hi, fhi, dhi = a, f, d
            else:
                if abs(d) <= -c2 * dphi0:
                    return a, f, d
                if d * (hi - lo) >= 0:
                    hi, fhi, dhi = lo, flo, dlo
                lo, flo, dlo = a, f, d

    prev, fprev, dprev = 0.0, phi0, dphi0
    a = min(alpha0, alpha_max)
    first = True
    while True:
        f, d = ev(a)
        if f > phi0 + c1 * a * dphi0 or (not first and f >= fprev):
            return zoom(prev, fprev, dprev, a, f, d)
        if abs(d) <= -c2 * dphi0:
            return a, f, d
        if d >= 0:
            return zoom(a, f, d, prev, fprev, dprev)
        if a >= alpha_max:
            raise LineSearchError("step reached the parameter box without meeting "
                                  "the curvature condition")
        prev, fprev, dprev = a, f, d
        a = min(2.0 * a, alpha_max)
        first = False


# ---------------------------------------------------------------------------
# BFGS and trust-region pieces

def bfgs_update(Delta, x, d):
    """BFGS update of a Hessian approximation for step x and gradient change d.

    Returns Delta unchanged when the curvature d'x is not positive.
    """
    x = np.asarray(x, dtype=float)
    d = np.asarray(d, dtype=float)
    dx = float(d @ x)
    if not dx > 0:
        return Delta
    Dx = Delta @ x
    xDx = float(x @ Dx)
    if not xDx > 0:
        return Delta
    out = Delta - np.outer(Dx, Dx) / xDx + np.outer(d, d) / dx
    return 0.5 * (out + out.T)


def tr_subproblem(g, H, radius, tol=1e-10, max_iter=100):
    """Minimize g'p + p'Hp/2 subject to |p| <= radius.

    Returns (p, mu) with (H + mu I) p = -g, mu >= 0, H + mu I positive
    semidefinite and mu (radius - |p|) = 0, including the hard case.  The
    secular equation 1/|p(mu)| = 1/radius is solved by safeguarded Newton
    steps in the eigenbasis of H.
    """
    g = np.asarray(g, dtype=float)
    H = np.asarray(H, dtype=float)
    if not radius > 0:
        raise ValueError("trust radius must be positive")
    if not np.allclose(H, H.T, rtol=1e-10, atol=1e-12 * max(1.0, np.abs(H).max())):
        raise ValueError("Hessian must be symmetric")
    lam, Q = np.linalg.eigh(0.5 * (H + H.T))
    gt = Q.T @ g
    lmin = lam[0]
    scale = max(1.0, np.abs(lam).max())
    gnorm = np.linalg.norm(g)

    def p_of(mu):
        return -gt / (lam + mu)

    if lmin > 1e-14 * scale:
        p = p_of(0.0)
        if np.linalg.norm(p) <= radius:
            return Q @ p, 0.0
    lo = max(0.0, -lmin)
    # hard case: g (nearly) orthogonal to the lowest eigenspace
    low = np.abs(lam - lmin) <= 1e-10 * scale
    if np.linalg.norm(gt[low]) <= 1e-12 * max(1.0, gnorm):
        mu = lo
        den = lam + mu
        pt = np.where(low, 0.0, -gt / np.where(low, 1.0, den))
        pn = np.linalg.norm(pt)
        if pn <= radius:
            tau = math.sqrt(max(radius * radius - pn * pn, 0.0))
            z = np.zeros_like(pt)
            z[np.flatnonzero(low)[0]] = 1.0
            return Q @ (pt + tau * z), mu
    # easy case: the root of 1/|p(mu)| - 1/radius on (lo, hi]; at hi every
    # lam_i + mu >= |g|/radius, so |p(hi)| <= radius
    hi = lo + gnorm / radius
    mu = hi
    for _ in range(max_iter):
        den = lam + mu
        p = -gt / den
        pn = np.linalg.norm(p)
        if abs(pn - radius) <= tol * radius:
            break
        if pn < radius:
            hi = mu
        else:
            lo = mu
        # Newton step on phi(mu) = 1/|p| - 1/radius, phi' = sum(gt^2/den^3)/|p|^3
        phi = 1.0 / pn - 1.0 / radius
        dphi = np.sum(gt * gt / den ** 3) / pn ** 3
        new = mu - phi / dphi
        if not (lo < new < hi):
            new = 0.5 * (lo + hi)
        mu = new
    return Q @ p_of(mu), float(mu)


def model_decrease(g, H, p):
    return -(g @ p + 0.5 * p @ H @ p)


# ---------------------------------------------------------------------------
# minimize

def _box(objective, d):
    fb = getattr(objective, "feasible_box", None)
    if fb is None:
        return np.full(d, -np.inf), np.full(d, np.inf)
    lo, hi = fb()
    return np.asarray(lo, dtype=float), np.asarray(hi, dtype=float)


def _max_step(beta, p, lo, hi):
    amax = np.inf
    for b, pj, l, u in zip(beta, p, lo, hi):
        if pj > 0 and np.isfinite(u):
            amax = min(amax, (u - b) / pj)
        elif pj < 0 and np.isfinite(l):
            amax = min(amax, (l - b) / pj)
    return max(amax, 0.0)


def _is_pd(H):
    try:
        np.linalg.cholesky(H)
        return True
    except np.linalg.LinAlgError:
        return False


def _min_eig(H):
    return float(np.linalg.eigvalsh(0.5 * (H + H.T))[0])


def minimize(objective, beta0, cfg: OptimizerConfig | None = None, init_hess=None):
    """Minimize ``objective`` from ``beta0``.  Returns an ``OptResult``.

    ``init_hess`` seeds the quasi-Newton Hessian approximation (for example
    the final approximation of an earlier run).
    """
    cfg = OptimizerConfig() if cfg is None else cfg
    beta = np.array(beta0, dtype=float)
    lo, hi = _box(objective, beta.size)
    if np.any(beta < lo) or np.any(beta > hi):
        beta = np.clip(beta, lo, hi)
    f = float(objective.value(beta))
    if not np.isfinite(f):
        raise ValueError("objective is not finite at the starting point")
    tol = cfg.grad_tol if cfg.grad_tol is not None else 1e-6 * max(1.0, abs(f))
    if cfg.routine == "TR":
        return _minimize_tr(objective, beta, f, tol, cfg, lo, hi)
    return _minimize_ls(objective, beta, f, tol, cfg, lo, hi, init_hess)


def _finish(objective, cfg, res):
    if cfg.check_second_order and cfg.routine != "TR" and hasattr(objective, "hess"):
        res.trace.min_eig = _min_eig(objective.hess(res.beta))
    return res


def _minimize_ls(objective, beta, f, tol, cfg, lo, hi, init_hess):
    d = beta.size
    g = np.asarray(objective.grad(beta), dtype=float)
    trace = OptTrace()
    trace.record(beta, f, np.linalg.norm(g), "start")
    gn = cfg.routine == "GN"
    Delta = None
    if not gn:
        if init_hess is not None and _is_pd(init_hess):
            Delta = np.array(init_hess, dtype=float)
        elif cfg.init_hessian == "fd" and hasattr(objective, "hess"):
            H0 = objective.hess(beta)
            if _is_pd(H0):
                Delta = H0
        if Delta is None:
            Delta = np.eye(d) * max(1.0, np.linalg.norm(g))
    reason = "max_iter"
    it = 0
    for it in range(1, cfg.max_iter + 1):
        if np.linalg.norm(g) <= tol:
            reason = "near_root"
            it -= 1
            break
        if gn:
            r = np.asarray(objective.residual(beta), dtype=float)
            J = np.asarray(objective.jacobian(beta), dtype=float)
            p = np.linalg.lstsq(J, -r, rcond=None)[0]
        else:
            p = -np.linalg.solve(Delta, g)
        slope = float(g @ p)
        if not slope < 0:
            if gn:
                reason = "line_search_fail"
                break
            Delta = np.eye(d) * max(1.0, np.linalg.norm(g))
            p = -g / Delta[0, 0]
            slope = float(g @ p)
        amax = _max_step(beta, p, lo, hi)
        if amax <= 0:
            reason = "line_search_fail"
            break
        cache = {}

        def fg(a, beta=beta, p=p, cache=cache):
            b = beta + a * p
            fv = float(objective.value(b))
            gv = np.asarray(objective.grad(b), dtype=float)
            cache[a] = (b, fv, gv)
            return fv, float(gv @ p)

        try:
            a, fa, _ = wolfe_line_search(fg, f, slope, 1.0, cfg.c1, cfg.c2,
                                         alpha_max=amax, max_iter=cfg.ls_max_iter)
            bnew, fnew, gnew = cache[a]
            tag = "accepted"
        except LineSearchError:
            # fall back to the best sufficient-decrease point seen, if any
            ok = [(v[1], k) for k, v in cache.items()
                  if np.isfinite(v[1]) and v[1] <= f + cfg.c1 * k * slope]
            if not ok:
                reason = "line_search_fail"
                break
            a = min(ok)[1]
            bnew, fnew, gnew = cache[a]
            tag = "armijo_only"
        if not gn:
            Delta = bfgs_update(Delta, bnew - beta, gnew - g)
        beta, f, g = bnew, fnew, gnew
        trace.record(beta, f, np.linalg.norm(g), tag)
    else:
        if np.linalg.norm(g) <= tol:
            reason = "near_root"
    trace.reason = reason
    res = OptResult(beta, f, g, reason, it, trace, Delta)
    return _finish(objective, cfg, res)


def _minimize_tr(objective, beta, f, tol, cfg, lo, hi):
    radius = cfg.tr_init_radius
    g = np.asarray(objective.grad(beta), dtype=float)
    H = np.asarray(objective.hess(beta), dtype=float)
    trace = OptTrace()
    trace.record(beta, f, np.linalg.norm(g), "start")
    reason = "max_iter"
    it = 0
    for it in range(1, cfg.max_iter + 1):
        emin = _min_eig(H)
        hnorm = max(1.0, np.abs(np.linalg.eigvalsh(H)).max())
        if np.linalg.norm(g) <= tol and emin >= -cfg.eig_tol * hnorm:
            reason = "near_root_second_order"
            it -= 1
            break
        p, _ = tr_subproblem(g, H, radius)
        amax = _max_step(beta, p, lo, hi)
        if amax < 1.0:
            p = p * amax
        pred = model_decrease(g, H, p)
        if not pred > 0 or np.linalg.norm(p) == 0:
            if radius < 1e-14:
                reason = "line_search_fail"
                break
            radius *= 0.25
            trace.record(beta, f, np.linalg.norm(g), "shrunk")
            continue
        bnew = beta + p
        try:
            fnew = float(objective.value(bnew))
        except (ValueError, ArithmeticError, np.linalg.LinAlgError):
            fnew = np.inf
        rho = (f - fnew) / pred if np.isfinite(fnew) else -np.inf
        pn = np.linalg.norm(p)
        if rho >= cfg.tr_eta_accept:
            beta, f = bnew, fnew
            g = np.asarray(objective.grad(beta), dtype=float)
            H = np.asarray(objective.hess(beta), dtype=float)
            if rho >= 0.75 and pn >= 0.99 * radius:
                radius *= 2.0
            elif rho < 0.25:
                radius = 0.25 * pn
            trace.record(beta, f, np.linalg.norm(g), "accepted")
        else:
            radius = 0.25 * min(radius, pn)
            trace.record(beta, f, np.linalg.norm(g), "shrunk")
            if radius < 1e-14:
                reason = "line_search_fail"
                break
    trace.reason = reason
    trace.min_eig = _min_eig(H)
    return OptResult(beta, f, g, reason, it, trace, H)


def minimize_multistart(objective, starts, cfg: OptimizerConfig | None = None):
    """Run ``minimize`` from each start and keep the lowest terminal value."""
    best = None
    for b0 in starts:
        try:
            res = minimize(objective, b0, cfg)
        except (ValueError, np.linalg.LinAlgError):
            continue
        if best is None or (res.converged, -res.value) > (best.converged, -best.value):
            best = res
    if best is None:
        raise ValueError("every start point failed")
    return best


class FunctionObjective:
    """Wrap plain callables as an objective."""

    def __init__(self, value, grad, hess=None, residual=None, jacobian=None, box=None):
        self.value = value
        self.grad = grad
        if hess is not None:
            self.hess = hess
        if residual is not None:
            self.residual = residual
        if jacobian is not None:
            self.jacobian = jacobian
        if box is not None:
            self.feasible_box = lambda: box


def result_dict(res: OptResult):
    out = {"beta": [float(v) for v in res.beta], "value": res.value,
           "grad": [float(v) for v in res.grad], "reason": res.reason, "n_iter": res.n_iter}
    out["trace"] = {k: v for k, v in asdict(res.trace).items() if k != "iterates"}
    return out
