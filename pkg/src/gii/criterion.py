"""Wald, LR and LM criteria built on the smoothed, jackknifed binding function."""
from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass, field

import numpy as np

from . import auxiliary as aux
from .models import ShockSet, StructuralConfig, default_bounds, smooth_batch
from .smoothing import JackknifePlan, jackknife_weights

KINDS = ("Wald", "LR", "LM")


class CriterionError(ValueError):
    pass


@dataclass
class CriterionConfig:
    kind: str = "LR"
    lam: float = 0.03
    M: int = 10
    jack: JackknifePlan = field(default_factory=jackknife_weights)
    W: np.ndarray | None = None
    V: np.ndarray | None = None
    fd_step: float | None = None   # default lam / 300
    dyn_mode: str = "product"
    kernel: str = "logistic"
    cache_size: int = 64

    def __post_init__(self):
        if self.kind not in KINDS:
            raise CriterionError(f"criterion kind must be one of {KINDS}")
        if not self.lam > 0:
            raise CriterionError("the criterion needs a positive bandwidth")
        if self.M < 1:
            raise CriterionError("M must be >= 1")
        if self.fd_step is None:
            self.fd_step = self.lam / 300.0

    def weight(self, which, d):
        Wm = getattr(self, which)
        if Wm is None:
            return np.eye(d)
        Wm = np.asarray(Wm, dtype=float)
        if Wm.shape != (d, d) or not np.allclose(Wm, Wm.T):
            raise CriterionError(f"{which} must be a symmetric {d}x{d} matrix")
        try:
            np.linalg.cholesky(Wm)
        except np.linalg.LinAlgError:
            raise CriterionError(f"{which} is not positive definite") from None
        return Wm


@dataclass
class BindingEval:
    beta: np.ndarray
    theta_bar: np.ndarray       # jackknifed average of the simulated fits
    per_m: list                 # per grid point r: (M, d_theta) fits
    stats: list                 # per grid point r: moments averaged over m


class Criterion:
    """GII objective for one dataset and one common set of simulation shocks.

    ``shocks.eta[1:M+1]`` are the simulation panels; the data enter through
    their auxiliary moments ``data_stats``.
    """

    def __init__(self, cfg: StructuralConfig, shocks: ShockSet, design: aux.AuxiliaryDesign,
                 data_stats: aux.SufficientStats, ccfg: CriterionConfig, bounds=None):
        if shocks.M < ccfg.M:
            raise CriterionError(f"criterion needs M={ccfg.M} panels, shock set has {shocks.M}")
        self.cfg = cfg
        self.shocks = shocks
        self.design = design
        self.spec = design.spec
        self.ccfg = ccfg
        self.data_stats = data_stats
        self.data_fit = aux.fit(self.spec, data_stats)
        self.theta_hat = self.data_fit.theta[0]
        d = self.spec.d_theta
        self.W = ccfg.weight("W", d)
        self.V = ccfg.weight("V", d)
        self._Wchol = np.linalg.cholesky(self.W)
        if bounds is None:
            bounds = default_bounds(cfg.model_id)
        self.lower = np.asarray(bounds[0], dtype=float)
        self.upper = np.asarray(bounds[1], dtype=float)
        self._cache = OrderedDict()
        self.n_binding = 0

    @property
    def d_beta(self):
        return len(self.cfg.beta)

    def step(self, beta):
        return self.ccfg.fd_step * np.maximum(1.0, np.abs(beta))

    def feasible_box(self):
        """Box inside which every finite-difference stencil stays within bounds."""
        h_lo = 2.0 * self.step(self.lower)
        h_hi = 2.0 * self.step(self.upper)
        return self.lower + h_lo, self.upper - h_hi

    def _check_beta(self, beta):
        beta = np.asarray(beta, dtype=float).reshape(-1)
        if beta.shape != (self.d_beta,):
            raise CriterionError(f"beta must have {self.d_beta} entries")
        if not np.all(np.isfinite(beta)):
            raise CriterionError("non-finite beta")
        if np.any(beta < self.lower) or np.any(beta > self.upper):
            raise CriterionError(f"beta {beta} outside the parameter box")
        return beta

    # -- binding function ---------------------------------------------------

    def binding(self, beta) -> BindingEval:
        beta = self._check_beta(beta)
        key = beta.tobytes()
        hit = self._cache.get(key)
        if hit is not None:
            self._cache.move_to_end(key)
            return hit
        ev = self._binding(beta)
        self._cache[key] = ev
        if len(self._cache) > self.ccfg.cache_size:
            self._cache.popitem(last=False)
        return ev

    def _binding(self, beta):
        cc = self.ccfg
        cfg = self.cfg.with_beta(beta)
        ms = slice(1, cc.M + 1)
        per_m, stats = [], []
        for r, lam in enumerate(cc.jack.grid(cc.lam)):
            Y = smooth_batch(cfg, self.shocks, ms, lam, cc.dyn_mode, cc.kernel)
            st = self.design.accumulate(Y)
            try:
                f = aux.fit(self.spec, st)
            except aux.DegenerateDesignError as e:
                m = None if e.m is None else e.m + 1
                raise aux.DegenerateDesignError(f"{e} [simulation m={m}, grid r={r}]",
                                                e.group, m) from None
            per_m.append(f.theta)
            stats.append(st.mean())
        theta_bar = cc.jack.gamma @ np.array([t.mean(axis=0) for t in per_m])
        self.n_binding += 1
        return BindingEval(beta, theta_bar, per_m, stats)

    def theta_bar(self, beta):
        return self.binding(beta).theta_bar

    # -- criteria -------------------------------------------------------------

    def value(self, beta):
        ev = self.binding(beta)
        kind = self.ccfg.kind
        if kind == "Wald":
            g = ev.theta_bar - self.theta_hat
            return float(g @ self.W @ g)
        if kind == "LR":
            return float(-aux.loglik(self.spec, ev.theta_bar, self.data_stats)[0])
        s = self.lm_score(ev)
        return float(s @ self.V @ s)

    __call__ = value

    def lm_score(self, ev: BindingEval):
        """Jackknifed average simulated score at the data fit."""
        blocks = [sum(g * st.blocks[b] for g, st in zip(self.ccfg.jack.gamma, ev.stats))
                  for b in range(len(self.spec.groups))]
        comb = aux.SufficientStats(blocks, self.design.n)
        return aux.score_mean(self.spec, self.theta_hat, comb)[0]

    def residual(self, beta):
        """Wald residual L'(theta_bar - theta_hat) with W = L L'."""
        return self._Wchol.T @ (self.theta_bar(beta) - self.theta_hat)

    # -- finite-difference derivatives ------------------------------------------

    def grad(self, beta):
        beta = self._check_beta(beta)
        h = self.step(beta)
        g = np.empty(self.d_beta)
        for j in range(self.d_beta):
            e = np.zeros(self.d_beta)
            e[j] = h[j]
            fp, fm = self.value(beta + e), self.value(beta - e)
            if not (np.isfinite(fp) and np.isfinite(fm)):
                raise CriterionError(f"non-finite criterion in the stencil of coordinate {j}")
            g[j] = (fp - fm) / (2.0 * h[j])
        return g

    def hess(self, beta):
        beta = self._check_beta(beta)
        h = self.step(beta)
        d = self.d_beta
        f0 = self.value(beta)
        H = np.empty((d, d))
        E = np.diag(h)
        for j in range(d):
            H[j, j] = (self.value(beta + E[j]) - 2.0 * f0 + self.value(beta - E[j])) / h[j] ** 2
            for k in range(j):
                fpp = self.value(beta + E[j] + E[k])
                fpm = self.value(beta + E[j] - E[k])
                fmp = self.value(beta - E[j] + E[k])
                fmm = self.value(beta - E[j] - E[k])
                H[j, k] = H[k, j] = (fpp - fpm - fmp + fmm) / (4.0 * h[j] * h[k])
        if not np.all(np.isfinite(H)):
            raise CriterionError("non-finite Hessian")
        return 0.5 * (H + H.T)

    def jacobian(self, beta, fn=None):
        """Central-difference Jacobian of ``fn`` (default: the Wald residual)."""
        fn = self.residual if fn is None else fn
        beta = self._check_beta(beta)
        h = self.step(beta)
        cols = []
        for j in range(self.d_beta):
            e = np.zeros(self.d_beta)
            e[j] = h[j]
            cols.append((fn(beta + e) - fn(beta - e)) / (2.0 * h[j]))
        return np.column_stack(cols)


def make_criterion(cfg: StructuralConfig, shocks: ShockSet, spec: aux.AuxiliarySpec,
                   data_Y, ccfg: CriterionConfig, bounds=None, design=None) -> Criterion:
    """Build a criterion from the observed outcome batch ``data_Y`` (1, d_y*T, n)."""
    if design is None:
        design = aux.AuxiliaryDesign(spec, shocks.x)
    return Criterion(cfg, shocks, design, design.accumulate(data_Y), ccfg, bounds)
