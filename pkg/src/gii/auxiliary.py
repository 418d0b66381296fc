"""Auxiliary model: Gaussian linear-probability / SUR regressions fitted from moments.

Each equation group pools one or more periods that share the coefficient
matrix A (k regressors x d outcomes) and the error precision P = Sigma^{-1}.
The parameter vector of a group is

    [vec(A) outcome-major, vech(P)]       vech order: (0,0), (1,0), (1,1), ...

and the groups are stacked in order.  Everything the fit, likelihood and
average score need is the per-group moment matrix

    S_g = (1/n) sum_i sum_{t in g} w_it w_it',   w_it = (z_it, y_it),

so a fit is a deterministic function of these sufficient statistics.  The
covariate-only block is computed once per dataset and cached in
``AuxiliaryDesign``.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from . import _backend
from .models import MODEL_INFO

LOG_2PI = np.log(2.0 * np.pi)
RCOND_MIN = 1e-12
VARIANTS = ("#1", "#2", "#3", "#4")


class DegenerateDesignError(ValueError):
    """Singular regressor moments or a non positive definite residual covariance."""

    def __init__(self, msg, group=None, m=None):
        super().__init__(msg)
        self.group = group
        self.m = m


@dataclass(frozen=True)
class XTerm:
    """Product of covariate powers; ``factors`` holds (var, lag, power).  Empty is the constant."""
    factors: tuple = ()

    def label(self):
        if not self.factors:
            return "1"
        parts = []
        for var, lag, power in self.factors:
            s = f"x{var + 1}[t-{lag}]" if lag else f"x{var + 1}[t]"
            parts.append(s + (f"^{power}" if power != 1 else ""))
        return "*".join(parts)


@dataclass(frozen=True)
class YTerm:
    """Lagged outcome y_{outcome, t-lag}.  Lags into unobserved periods are zero."""
    outcome: int
    lag: int

    def label(self):
        return f"y{self.outcome + 1}[t-{self.lag}]"


@dataclass(frozen=True)
class EquationGroup:
    periods: tuple   # 0-based periods sharing (A, P)
    terms: tuple     # regressors in reporting order
    outcomes: tuple  # outcome series regressed on the terms

    @property
    def k(self):
        return len(self.terms)

    @property
    def d(self):
        return len(self.outcomes)

    @property
    def n_params(self):
        return self.k * self.d + self.d * (self.d + 1) // 2


@dataclass(frozen=True)
class AuxiliarySpec:
    model_id: str
    variant: str
    T: int
    s: int
    tie_after: int
    groups: tuple
    d_y: int

    @property
    def d_theta(self):
        return sum(g.n_params for g in self.groups)

    def slices(self):
        out, pos = [], 0
        for g in self.groups:
            out.append(slice(pos, pos + g.n_params))
            pos += g.n_params
        return out

    def labels(self):
        names = []
        for gi, g in enumerate(self.groups):
            tag = f"g{gi + 1}"
            for j in g.outcomes:
                names += [f"{tag}:y{j + 1}~{t.label()}" for t in g.terms]
            for r, c in zip(*np.tril_indices(g.d)):
                names.append(f"{tag}:P[{g.outcomes[r] + 1},{g.outcomes[c] + 1}]")
        return names

    def describe(self):
        """Plain-text listing of the regressors of every group."""
        lines = [f"{self.model_id} auxiliary {self.variant}: {len(self.groups)} groups, "
                 f"d_theta = {self.d_theta}"]
        for gi, g in enumerate(self.groups):
            per = ",".join(str(t + 1) for t in g.periods)
            regs = ", ".join(t.label() for t in g.terms)
            outs = ", ".join(f"y{j + 1}" for j in g.outcomes)
            lines.append(f"  group {gi + 1} (t = {per}): ({outs}) on ({regs})")
        return "\n".join(lines)


# ---------------------------------------------------------------------------
# regressor menus

CONST = XTerm()


def _x(lag, power=1, var=0):
    return XTerm(((var, lag, power),))


def _y(lag, outcome=0):
    return YTerm(outcome, lag)


def _dynamic_terms(variant, tau, initial):
    """Regressors at relative period tau = 1, 2, ... of the observed window.

    ``initial`` adds the pre-sample covariate lags used when the first
    choices are unobserved.
    """
    X, Y = _x, _y
    if variant == "#1":
        return [CONST, X(0), Y(1)]
    if variant == "#2":
        if tau == 1:
            return [CONST, X(0)] + ([X(1)] if initial else [])
        return [CONST, X(0), Y(1), X(1)]
    extra = [X(3)] if (initial and variant == "#4") else []
    if tau == 1:
        base = [CONST, X(0), X(0, 3)] + ([X(1), X(2)] if initial else [])
        return base + extra
    if tau == 2:
        return [CONST, X(0), Y(1), X(1)] + ([X(2)] if initial else []) + extra
    if tau == 3:
        return [CONST, X(0), Y(1), X(1), Y(2), X(2)] + extra
    if variant == "#3" or tau == 4:
        full = [CONST, X(0), Y(1), X(1), Y(2), X(2), Y(3)]
        return full + ([X(3)] if variant == "#4" else [])
    return [CONST, X(0), Y(1), X(1), Y(2), X(2), Y(3), X(3), Y(4)]


_DYN_TIE = {"#1": 1, "#2": 4, "#3": 4, "#4": 5}


def _monomials(n_vars, max_degree, skip_pure_power=None):
    terms = [CONST]
    for deg in range(1, max_degree + 1):
        for combo in itertools.combinations_with_replacement(range(n_vars), deg):
            powers = np.bincount(combo, minlength=n_vars)
            if skip_pure_power is not None and deg == skip_pure_power and powers.max() == deg:
                continue
            terms.append(XTerm(tuple((v, 0, int(p)) for v, p in enumerate(powers) if p)))
    return terms


def _m4_terms(variant):
    if variant == "#1":
        return _monomials(3, 1)
    if variant == "#2":
        def mono(*vs):
            return XTerm(tuple((v, 0, 1) for v in vs))
        sq = [XTerm(((v, 0, 2),)) for v in range(3)]
        return (_monomials(3, 1) + sq
                + [mono(0, 1), mono(0, 2), mono(1, 2), mono(0, 1, 2)])
    if variant == "#3":
        return _monomials(3, 3)
    # all products up to order four except the pure fourth powers
    return _monomials(3, 4, skip_pure_power=4)


def _m5_terms(variant):
    if variant == "#1":
        return _monomials(2, 1)
    if variant == "#2":
        return _monomials(2, 2)
    raise ValueError("M5 auxiliary variants are #1 and #2")


def make_spec(model_id, variant="#3", T=None, s=0, tie_after=None) -> AuxiliarySpec:
    """Auxiliary model for a structural model and regressor menu #1..#4.

    For the dynamic models, periods after ``tie_after`` (counted within the
    observed window) share coefficients and variance.  Menu #2 defaults to
    ``tie_after=4``; ``tie_after=2`` gives the smaller 8/9-parameter form.
    """
    if model_id not in MODEL_INFO:
        raise ValueError(f"unknown model_id {model_id!r}")
    if variant not in VARIANTS:
        raise ValueError(f"variant must be one of {VARIANTS}")
    info = MODEL_INFO[model_id]
    if info.dynamic:
        if T is None:
            raise ValueError("T is required for dynamic models")
        q = _DYN_TIE[variant] if tie_after is None else int(tie_after)
        if q < 1:
            raise ValueError("tie_after must be >= 1")
        initial = model_id == "M3" and s > 0
        window = T - s
        groups = []
        for tau in range(1, min(q, window) + 1):
            periods = (s + tau - 1,) if tau < q else tuple(range(s + q - 1, T))
            terms = tuple(_dynamic_terms(variant, tau, initial))
            groups.append(EquationGroup(periods, terms, (0,)))
        spec = AuxiliarySpec(model_id, variant, T, s, q, tuple(groups), 1)
    else:
        terms = tuple(_m4_terms(variant) if model_id == "M4" else _m5_terms(variant))
        spec = AuxiliarySpec(model_id, variant, 1, 0, 1,
                             (EquationGroup((0,), terms, (0, 1)),), 2)
    d_beta = len(info.params)
    if spec.d_theta < d_beta:
        raise ValueError(f"auxiliary model has {spec.d_theta} parameters, fewer than "
                         f"the {d_beta} structural parameters")
    return spec


# ---------------------------------------------------------------------------
# design and sufficient statistics

class AuxiliaryDesign:
    """An auxiliary spec bound to one covariate panel x of shape (d_x, T, n).

    Every distinct covariate regressor (term, period) becomes a row of
    ``X``; rows of an outcome batch are addressed after them.  Each group's
    moment matrix is a fixed linear map of the inner products between these
    rows, so ``accumulate`` forms the products that involve outcomes once per
    panel and maps them into all groups with a single matrix product.  The
    covariate-only part is computed here once and reused.
    """

    def __init__(self, spec: AuxiliarySpec, x):
        x = np.asarray(x, dtype=float)
        self.spec = spec
        self.n = x.shape[2]
        self.T = x.shape[1]
        if self.T != spec.T:
            raise ValueError(f"covariates have T={self.T}, spec expects {spec.T}")
        C = spec.d_y * self.T
        rows, xrows = {}, []
        layouts = []  # per group, per period: row index of each entry of w (-1 = zero)
        for g in spec.groups:
            per = []
            for t in g.periods:
                w = []
                for term in g.terms:
                    if isinstance(term, XTerm):
                        key = (term, t)
                        if key not in rows:
                            rows[key] = len(xrows)
                            xrows.append(self._xrow(term, t, x))
                        w.append(rows[key])
                    else:
                        src = t - term.lag
                        w.append(~(term.outcome * self.T + src) if src >= spec.s else None)
                w += [~(j * self.T + t) for j in g.outcomes]
                per.append(w)
            layouts.append(per)
        self.X = np.ascontiguousarray(np.array(xrows))
        self.X.setflags(write=False)
        kx = self.kx = self.X.shape[0]
        # outcome column c is row kx + c; ~c encodes it before kx is known
        for per in layouts:
            for w in per:
                for i, v in enumerate(w):
                    w[i] = -1 if v is None else (v if v >= 0 else kx + ~v)
        self.layouts = [[np.asarray(w, dtype=np.intp) for w in per] for per in layouts]
        self.C = C
        self._build_maps()

    def _xrow(self, term, t, x):
        row = np.ones(self.n)
        for var, lag, power in term.factors:
            if t - lag < 0:
                raise ValueError(f"regressor {term.label()} at period {t + 1} "
                                 "needs a covariate before the first period")
            row = row * x[var, t - lag] ** power
        return row

    def _build_maps(self):
        kx, n = self.kx, self.n
        Sxx = self.X @ self.X.T / n
        pairs, where = [], {}
        sizes = [len(per[0]) for per in self.layouts]
        offsets = np.concatenate([[0], np.cumsum([s * s for s in sizes])])
        const = np.zeros(offsets[-1])
        entries = []  # (pair index, flat position)
        for gi, per in enumerate(self.layouts):
            kw = sizes[gi]
            for w in per:
                for i in range(kw):
                    for j in range(kw):
                        a, b = w[i], w[j]
                        if a < 0 or b < 0:
                            continue
                        pos = offsets[gi] + i * kw + j
                        if a < kx and b < kx:
                            const[pos] += Sxx[a, b]
                            continue
                        key = (min(a, b), max(a, b))
                        if key not in where:
                            where[key] = len(pairs)
                            pairs.append(key)
                        entries.append((where[key], pos))
        self.pairs = np.array(pairs, dtype=np.intp).reshape(-1, 2)
        Map = np.zeros((len(pairs), offsets[-1]))
        for p, pos in entries:
            Map[p, pos] += 1.0 / n
        self._map = Map
        self._const = const
        self._offsets = offsets
        self._sizes = sizes

    def accumulate(self, Y) -> "SufficientStats":
        """Moments for an outcome batch Y of shape (M, d_y*T, n)."""
        Y = np.ascontiguousarray(Y, dtype=float)
        if Y.ndim == 2:
            Y = Y[None]
        M = Y.shape[0]
        if Y.shape[1:] != (self.C, self.n):
            raise ValueError(f"outcome batch shape {Y.shape[1:]} does not match the design")
        dots = np.empty((M, len(self.pairs)))
        _backend.pair_dots(self.X, Y, self.pairs, dots)
        flat = dots @ self._map
        flat += self._const
        blocks = []
        for gi, kw in enumerate(self._sizes):
            S = flat[:, self._offsets[gi]:self._offsets[gi + 1]].reshape(M, kw, kw)
            blocks.append(0.5 * (S + S.transpose(0, 2, 1)))  # exact symmetry
        return SufficientStats(blocks, self.n)

    def regressors(self, Y):
        """Raw per-period designs for one panel Y (d_y*T, n).

        Returns, per group, a list over its periods of (Z (n, k), y (n, d)).
        """
        Y = np.asarray(Y, dtype=float)
        R = np.vstack([self.X, Y, np.zeros((1, self.n))])
        out = []
        for g, per in zip(self.spec.groups, self.layouts):
            res = []
            for w in per:
                W = R[np.where(w < 0, R.shape[0] - 1, w)].T
                res.append((W[:, :g.k], W[:, g.k:]))
            out.append(res)
        return out


@dataclass
class SufficientStats:
    """Per-group moment matrices, each of shape (M, k_g + d_g, k_g + d_g)."""
    blocks: list
    n: int

    @property
    def M(self):
        return self.blocks[0].shape[0]

    def select(self, m):
        return SufficientStats([b[m:m + 1] for b in self.blocks], self.n)

    def mean(self):
        return SufficientStats([b.mean(axis=0, keepdims=True) for b in self.blocks], self.n)


def accumulate_stats(design: AuxiliaryDesign, Y) -> SufficientStats:
    return design.accumulate(Y)


# ---------------------------------------------------------------------------
# fit, likelihood, score, Hessian

def _vech(P):
    r, c = np.tril_indices(P.shape[-1])
    return P[..., r, c]


def _unvech(v, d):
    r, c = np.tril_indices(d)
    P = np.zeros(v.shape[:-1] + (d, d))
    P[..., r, c] = v
    P[..., c, r] = v
    return P


def unpack(spec: AuxiliarySpec, theta):
    """Split theta (..., d_theta) into per-group (A (..., k, d), P (..., d, d))."""
    theta = np.asarray(theta, dtype=float)
    out = []
    for g, sl in zip(spec.groups, spec.slices()):
        th = theta[..., sl]
        kd = g.k * g.d
        A = th[..., :kd].reshape(th.shape[:-1] + (g.d, g.k)).swapaxes(-1, -2)
        out.append((A, _unvech(th[..., kd:], g.d)))
    return out


def pack(spec: AuxiliarySpec, parts):
    pieces = []
    for (A, P) in parts:
        lead = A.shape[:-2]
        pieces.append(A.swapaxes(-1, -2).reshape(lead + (-1,)))
        pieces.append(_vech(P))
    return np.concatenate(pieces, axis=-1)


@dataclass
class AuxiliaryFit:
    spec: AuxiliarySpec
    theta: np.ndarray      # (M, d_theta)
    loglik: np.ndarray     # (M,) average log-likelihood at theta
    stats: SufficientStats

    @property
    def variances(self):
        """Error covariance matrices Sigma per group, each (M, d, d)."""
        return [np.linalg.inv(P) for (_, P) in unpack(self.spec, self.theta)]


def fit(spec: AuxiliarySpec, stats: SufficientStats) -> AuxiliaryFit:
    """Gaussian ML (OLS) fit of every batch member; divide-by-n variances."""
    parts = []
    for gi, (g, S) in enumerate(zip(spec.groups, stats.blocks)):
        k, d, c = g.k, g.d, len(g.periods)
        Szz, Szy, Syy = S[:, :k, :k], S[:, :k, k:], S[:, k:, k:]
        diag = np.einsum("mii->mi", Szz)
        bad = np.flatnonzero(~np.all(diag > 0, axis=1))
        if bad.size:
            raise DegenerateDesignError(
                f"degenerate auxiliary design in group {gi + 1} (m={bad[0]}): "
                "a regressor is identically zero", gi, int(bad[0]))
        scale = 1.0 / np.sqrt(diag)
        C = Szz * scale[:, :, None] * scale[:, None, :]
        ev = np.linalg.eigvalsh(C)
        rc = ev[:, 0] / ev[:, -1]
        bad = np.flatnonzero(~(rc >= RCOND_MIN))
        if bad.size:
            raise DegenerateDesignError(
                f"degenerate auxiliary design in group {gi + 1} (m={bad[0]}): "
                f"reciprocal condition {rc[bad[0]]:.3g}", gi, int(bad[0]))
        A = np.linalg.solve(Szz, Szy)
        E = Syy - np.swapaxes(Szy, 1, 2) @ A
        Sigma = 0.5 * (E + np.swapaxes(E, 1, 2)) / c
        evs = np.linalg.eigvalsh(Sigma)
        bad = np.flatnonzero(~(evs[:, 0] > RCOND_MIN * np.maximum(evs[:, -1], 1e-300)))
        if bad.size:
            raise DegenerateDesignError(
                f"degenerate auxiliary design in group {gi + 1} (m={bad[0]}): "
                "residual covariance is not positive definite", gi, int(bad[0]))
        P = np.linalg.inv(Sigma)
        parts.append((A, 0.5 * (P + np.swapaxes(P, 1, 2))))
    theta = pack(spec, parts)
    return AuxiliaryFit(spec, theta, loglik(spec, theta, stats), stats)


def _residual_moments(S, A, k):
    """E = B'SB with B = [-A; I], the residual cross-moment (1/n) sum xi xi'."""
    d = A.shape[-1]
    B = np.concatenate([-A, np.broadcast_to(np.eye(d), A.shape[:-2] + (d, d))], axis=-2)
    return np.swapaxes(B, -1, -2) @ S @ B


def _check_pd(P, gi):
    sign, logdet = np.linalg.slogdet(P)
    if np.any(sign <= 0):
        raise DegenerateDesignError(f"precision matrix of group {gi + 1} is not "
                                    "positive definite", gi)
    return logdet


def loglik(spec: AuxiliarySpec, theta, stats: SufficientStats):
    """Average Gaussian log-likelihood for each batch member, shape (M,).

    ``theta`` may be one vector (shared) or one row per batch member.
    """
    theta = np.asarray(theta, dtype=float)
    total = 0.0
    for gi, ((A, P), g, S) in enumerate(zip(unpack(spec, theta), spec.groups, stats.blocks)):
        c, d = len(g.periods), g.d
        E = _residual_moments(S, A, g.k)
        logdet = _check_pd(P, gi)
        total = total + c * (-0.5 * d * LOG_2PI + 0.5 * logdet) \
            - 0.5 * np.einsum("...ij,...ji->...", P, E)
    return np.broadcast_to(total, (stats.M,)).copy()


def _vech_weights(d):
    r, c = np.tril_indices(d)
    return np.where(r == c, 1.0, 2.0)


def score_mean(spec: AuxiliarySpec, theta, stats: SufficientStats):
    """Average score (1/n) sum_i d l_i / d theta for each batch member, (M, d_theta)."""
    theta = np.asarray(theta, dtype=float)
    parts = []
    for gi, ((A, P), g, S) in enumerate(zip(unpack(spec, theta), spec.groups, stats.blocks)):
        k, c = g.k, len(g.periods)
        _check_pd(P, gi)
        R = S[:, :k, k:] - S[:, :k, :k] @ A      # (1/n) sum z xi'
        gA = R @ P
        E = _residual_moments(S, A, k)
        Sigma = np.linalg.inv(P)
        gP = 0.5 * c * Sigma - 0.5 * E
        parts.append((gA, gP))
    out = []
    for (gA, gP), g in zip(parts, spec.groups):
        out.append(np.swapaxes(gA, -1, -2).reshape(gA.shape[0], -1))
        out.append(_vech(gP) * _vech_weights(g.d))
    return np.concatenate(out, axis=-1)


def _basis(d):
    mats = []
    for r, c in zip(*np.tril_indices(d)):
        D = np.zeros((d, d))
        D[r, c] = 1.0
        D[c, r] = 1.0
        mats.append(D)
    return mats


def hessian(spec: AuxiliarySpec, theta, stats: SufficientStats):
    """Analytic Hessian of the average log-likelihood for one batch member."""
    theta = np.asarray(theta, dtype=float).reshape(-1)
    if stats.M != 1:
        raise ValueError("hessian expects statistics for a single panel")
    H = np.zeros((spec.d_theta, spec.d_theta))
    for gi, ((A, P), g, S, sl) in enumerate(zip(unpack(spec, theta), spec.groups,
                                                stats.blocks, spec.slices())):
        S = S[0]
        k, d, c = g.k, g.d, len(g.periods)
        _check_pd(P, gi)
        Szz = S[:k, :k]
        R = S[:k, k:] - Szz @ A
        Sigma = np.linalg.inv(P)
        Ds = _basis(d)
        kd = k * d
        blk = np.zeros((g.n_params, g.n_params))
        blk[:kd, :kd] = -np.kron(P, Szz)
        for q, D in enumerate(Ds):
            col = (R @ D).T.reshape(-1)
            blk[:kd, kd + q] = col
            blk[kd + q, :kd] = col
            for q2, D2 in enumerate(Ds):
                blk[kd + q, kd + q2] = -0.5 * c * np.trace(Sigma @ D @ Sigma @ D2)
        H[sl, sl] = blk
    return H


def scores_i(spec: AuxiliarySpec, design: AuxiliaryDesign, theta, Y):
    """Per-individual scores d l_i / d theta for one panel Y (d_y*T, n); shape (n, d_theta)."""
    theta = np.asarray(theta, dtype=float).reshape(-1)
    Y = np.asarray(Y, dtype=float)
    if Y.ndim == 3:
        Y = Y[0]
    out = np.zeros((design.n, spec.d_theta))
    for (A, P), g, per, sl in zip(unpack(spec, theta), spec.groups,
                                  design.regressors(Y), spec.slices()):
        k, d = g.k, g.d
        Sigma = np.linalg.inv(P)
        w = _vech_weights(d)
        r, c = np.tril_indices(d)
        blk = out[:, sl]  # view
        for Z, y in per:
            xi = y - Z @ A
            u = xi @ P                                   # (n, d)
            blk[:, :k * d] += (u[:, :, None] * Z[:, None, :]).reshape(design.n, -1)
            blk[:, k * d:] += w * (0.5 * Sigma[r, c] - 0.5 * xi[:, r] * xi[:, c])
    return out
