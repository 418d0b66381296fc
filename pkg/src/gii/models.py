"""Structural discrete-choice models: shocks, latent utilities and smoothed outcomes.

Five models are supported:

M1  binary panel probit with AR(1) errors, beta = (b, r)
M2  M1 plus a lagged choice, beta = (b1, b2, r)
M3  M2 with the first ``s`` choices unobserved
M4  static three-alternative probit, beta = (b10, b11, b12, b20, b21, b22, c1, c2)
M5  selection model with a wage equation, beta = (b10, b11, b20, b21, b22, c1, c2)

Arrays are stored period-major with individuals last so kernels stream over
``n``: covariates as (d_x, T, n), shocks as (M+1, d_eta, T, n) and smoothed
outcome batches as (M, d_y*T, n) with column ``j*T + t``.  The public
accessors return the logical (n, T, .) layout as views.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from . import _backend

MODEL_IDS = ("M1", "M2", "M3", "M4", "M5")
DYN_MODES = ("product", "nested")
KERNELS = ("logistic", "gaussian_cdf")


@dataclass(frozen=True)
class ModelInfo:
    params: tuple
    d_x: int      # covariates per period
    d_eta: int    # shocks per period
    d_y: int      # outcome columns per period
    J: int
    dynamic: bool
    discrete: tuple  # per outcome column: True for a choice share


MODEL_INFO = {
    "M1": ModelInfo(("b", "r"), 1, 1, 1, 2, True, (True,)),
    "M2": ModelInfo(("b1", "b2", "r"), 1, 1, 1, 2, True, (True,)),
    "M3": ModelInfo(("b1", "b2", "r"), 1, 1, 1, 2, True, (True,)),
    "M4": ModelInfo(("b10", "b11", "b12", "b20", "b21", "b22", "c1", "c2"),
                    3, 2, 2, 3, False, (True, True)),
    "M5": ModelInfo(("b10", "b11", "b20", "b21", "b22", "c1", "c2"),
                    2, 2, 2, 2, False, (True, False)),
}

# Box used as the parameter space when a config does not supply one.  The
# sign of c2 in M4 and of c1 in M5 is not identified (the shock enters one
# equation only), so those are normalized to be nonnegative.
_DEFAULT_BOUNDS = {
    "r": (-0.995, 0.995),
    "c1": (-10.0, 10.0),
    "c2": (-10.0, 10.0),
}


def default_bounds(model_id):
    info = MODEL_INFO[model_id]
    lo, hi = [], []
    for p in info.params:
        a, b = _DEFAULT_BOUNDS.get(p, (-10.0, 10.0))
        if (model_id, p) in (("M4", "c2"), ("M5", "c1")):
            a = 0.0
        lo.append(a)
        hi.append(b)
    return np.array(lo), np.array(hi)


class ModelError(ValueError):
    pass


@dataclass
class StructuralConfig:
    model_id: str
    beta: np.ndarray
    n: int
    T: int = 1
    s: int = 0

    def __post_init__(self):
        if self.model_id not in MODEL_INFO:
            raise ModelError(f"unknown model_id {self.model_id!r}")
        self.beta = np.asarray(self.beta, dtype=float).copy()
        info = self.info
        if self.beta.shape != (len(info.params),):
            raise ModelError(f"{self.model_id} expects {len(info.params)} parameters "
                             f"{info.params}, got shape {self.beta.shape}")
        if self.n < 1 or self.T < 1:
            raise ModelError("n and T must be positive")
        if not info.dynamic and self.T != 1:
            raise ModelError(f"{self.model_id} is static and needs T=1")
        if self.model_id == "M3":
            if not 0 <= self.s < self.T:
                raise ModelError("M3 needs 0 <= s < T")
        elif self.s != 0:
            raise ModelError("s > 0 is only meaningful for M3")

    @property
    def info(self) -> ModelInfo:
        return MODEL_INFO[self.model_id]

    @property
    def J(self):
        return self.info.J

    def with_beta(self, beta):
        return StructuralConfig(self.model_id, beta, self.n, self.T, self.s)

    def named(self, beta=None):
        b = self.beta if beta is None else beta
        return dict(zip(self.info.params, (float(v) for v in b)))


def _stream(seed, tag, m=0):
    ss = np.random.SeedSequence(int(seed), spawn_key=(int(tag), int(m)))
    return np.random.Generator(np.random.Philox(ss))


_TAG_X, _TAG_ETA = 0, 1


@dataclass(frozen=True)
class ShockSet:
    """Covariates and the M+1 shock panels, drawn once and reused for every beta.

    ``eta[0]`` generates the observed data; ``eta[1:]`` are the simulation
    panels.  Panel m comes from its own Philox stream keyed by (seed, m), so
    the first M panels do not depend on how many were drawn in total.
    """
    x: np.ndarray
    eta: np.ndarray
    seed: int
    meta: dict = field(default_factory=dict, compare=False)

    @property
    def M(self):
        return self.eta.shape[0] - 1

    @property
    def n(self):
        return self.x.shape[2]

    @property
    def T(self):
        return self.x.shape[1]

    def x_panel(self):
        """Covariates as an (n, T, d_x) view."""
        return self.x.transpose(2, 1, 0)

    def eta_panel(self, m):
        """Shock panel m as an (n, T, d_eta) view."""
        return self.eta[m].transpose(2, 1, 0)

    def digest(self, m=None):
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.x).tobytes())
        h.update(np.ascontiguousarray(self.eta if m is None else self.eta[m]).tobytes())
        return h.hexdigest()


def draw_covariates(cfg: StructuralConfig, seed):
    info = cfg.info
    return _stream(seed, _TAG_X).standard_normal((info.d_x, cfg.T, cfg.n))


def draw_shocks(cfg: StructuralConfig, M, seed, x=None) -> ShockSet:
    """Draw covariates (unless supplied) and shock panels m = 0..M."""
    info = cfg.info
    if x is None:
        x = draw_covariates(cfg, seed)
    else:
        x = np.ascontiguousarray(x, dtype=float)
        if x.shape != (info.d_x, cfg.T, cfg.n):
            raise ModelError(f"covariates must have shape {(info.d_x, cfg.T, cfg.n)}, "
                             f"got {x.shape}")
    eta = np.empty((M + 1, info.d_eta, cfg.T, cfg.n))
    for m in range(M + 1):
        eta[m] = _stream(seed, _TAG_ETA, m).standard_normal((info.d_eta, cfg.T, cfg.n))
    x.setflags(write=False)
    eta.setflags(write=False)
    return ShockSet(x, eta, int(seed))


def _check(cfg, shocks, ms):
    info = cfg.info
    if shocks.x.shape != (info.d_x, cfg.T, cfg.n):
        raise ModelError(f"shock covariates {shocks.x.shape} do not match "
                         f"{cfg.model_id} with n={cfg.n}, T={cfg.T}")
    if shocks.eta.shape[1:] != (info.d_eta, cfg.T, cfg.n):
        raise ModelError("shock panels do not match the structural config")
    if ms.start < 0 or ms.stop > shocks.eta.shape[0]:
        raise ModelError(f"simulation indices {ms.start}..{ms.stop - 1} outside 0..{shocks.M}")


def _as_slice(m):
    if isinstance(m, slice):
        return m
    return slice(int(m), int(m) + 1)


def _ar1(eta, r):
    """eps_t = r eps_{t-1} + eta_t with eps_0 = 0; eta (..., T, n)."""
    eps = np.empty_like(eta)
    prev = 0.0
    for t in range(eta.shape[-2]):
        prev = r * prev + eta[..., t, :]
        eps[..., t, :] = prev
    return eps


def _latent_batch(cfg, shocks, ms):
    """Latent indices for a batch, layout (M, k, T, n)."""
    b = cfg.beta
    x = shocks.x
    eta = shocks.eta[ms]
    mid = cfg.model_id
    if mid in ("M1", "M2", "M3"):
        r = b[1] if mid == "M1" else b[2]
        b1 = b[0]
        return (b1 * x[0] + _ar1(eta[:, 0], r))[:, None]
    if mid == "M4":
        b10, b11, b12, b20, b21, b22, c1, c2 = b
        e1, e2 = eta[:, 0], eta[:, 1]
        u1 = b10 + b11 * x[0] + b12 * x[1] + e1
        u2 = b20 + b21 * x[0] + b22 * x[2] + c1 * e1 + c2 * e2
        return np.stack([u1, u2], axis=1)
    b10, b11, b20, b21, b22, c1, c2 = b
    e1, e2 = eta[:, 0], eta[:, 1]
    w = b10 + b11 * x[0] + c1 * e1 + c2 * e2
    u = b20 + b21 * x[1] + b22 * w + e2
    return np.stack([u, w], axis=1)


def simulate_latent(cfg: StructuralConfig, shocks: ShockSet, m):
    """Latent utilities of panel m as an (n, T, k) array.

    M1: u = b x + eps.  M2/M3: the part b1 x + eps that excludes the lagged
    choice, whose smoothed value feeds back and is handled by
    ``smooth_choices``.  M4: (u1, u2).  M5: (u, w).
    """
    ms = _as_slice(m)
    _check(cfg, shocks, ms)
    return _latent_batch(cfg, shocks, ms)[0].transpose(2, 1, 0)


def smooth_batch(cfg: StructuralConfig, shocks: ShockSet, ms, lam,
                 dyn_mode="product", kernel="logistic"):
    """Smoothed outcomes for panels ``ms`` (slice or index), layout (M, d_y*T, n)."""
    if not lam >= 0.0:
        raise ModelError(f"smoothing parameter must be >= 0, got {lam}")
    if dyn_mode not in DYN_MODES:
        raise ModelError(f"dyn_mode must be one of {DYN_MODES}")
    if kernel not in KERNELS:
        raise ModelError(f"kernel must be one of {KERNELS}")
    if not np.all(np.isfinite(cfg.beta)):
        raise ModelError("non-finite structural parameters")
    ms = _as_slice(ms)
    _check(cfg, shocks, ms)
    lam = float(lam)
    fam = KERNELS.index(kernel)
    mid = cfg.model_id
    b = cfg.beta
    if mid == "M1":
        return _backend.smooth_binary(shocks.x[0], shocks.eta[ms, 0],
                                      b[0], 0.0, b[1], lam, 0, fam)
    if mid in ("M2", "M3"):
        return _backend.smooth_binary(shocks.x[0], shocks.eta[ms, 0], b[0], b[1], b[2],
                                      lam, int(dyn_mode == "nested"), fam)
    x = shocks.x[:, 0, :]
    eta = np.ascontiguousarray(shocks.eta[ms, :, 0, :])
    if mid == "M4":
        return _backend.smooth_trinomial(x, eta, *b, lam, fam)
    return _backend.smooth_selection(x, eta, *b, lam, fam)


@dataclass
class SmoothedPanel:
    y: np.ndarray          # (n, T, d_y)
    lam: float
    discrete: tuple


def smooth_choices(cfg: StructuralConfig, shocks: ShockSet, m, lam,
                   dyn_mode="product", kernel="logistic") -> SmoothedPanel:
    """Smoothed outcomes of panel m; ``lam == 0`` gives the hard choices.

    For M2/M3 the product recursion is
    y_t = K(v_t)(1 - y_{t-1}) + K(v_t + b2) y_{t-1} with y_0 = 0, and the
    nested form is y_t = K(v_t + b2 y_{t-1}).  M5 returns (K(u), w K(u)).
    """
    Y = smooth_batch(cfg, shocks, m, lam, dyn_mode, kernel)[0]
    d_y = cfg.info.d_y
    y = Y.reshape(d_y, cfg.T, cfg.n).transpose(2, 1, 0)
    return SmoothedPanel(y, float(lam), cfg.info.discrete)


@dataclass
class ObservedData:
    """Observed panel.  ``y`` is (n, T, d_y) with NaN where not observed.

    M3 hides the first ``s`` choices.  M5 stores (work, wage) and the wage is
    NaN for non-workers.
    """
    model_id: str
    y: np.ndarray
    x: np.ndarray  # (n, T, d_x)
    s: int = 0

    @property
    def n(self):
        return self.y.shape[0]

    @property
    def T(self):
        return self.y.shape[1]

    def outcome_batch(self):
        """Outcomes in batch layout (1, d_y*T, n) as the auxiliary model sees them.

        Unobserved entries become 0 (they are never used as regressands, and
        lags into unobserved periods are zero by construction).  For M5 the
        second column is the wage times the work indicator.
        """
        y = self.y.copy()
        if self.model_id == "M5":
            y[:, :, 1] = np.where(y[:, :, 0] > 0, y[:, :, 1], 0.0)
        y = np.nan_to_num(y, nan=0.0)
        d_y = y.shape[2]
        return np.ascontiguousarray(y.transpose(2, 1, 0).reshape(1, d_y * self.T, self.n))

    def covariates(self):
        """Covariates in the (d_x, T, n) layout."""
        return np.ascontiguousarray(self.x.transpose(2, 1, 0))


def generate_observed(cfg: StructuralConfig, shocks: ShockSet) -> ObservedData:
    """Hard choices from panel m = 0."""
    Y = smooth_batch(cfg, shocks, 0, 0.0)[0]
    d_y = cfg.info.d_y
    y = Y.reshape(d_y, cfg.T, cfg.n).transpose(2, 1, 0).copy()
    if cfg.model_id == "M3" and cfg.s > 0:
        y[:, :cfg.s, :] = np.nan
    if cfg.model_id == "M5":
        w = _latent_batch(cfg, shocks, slice(0, 1))[0, 1, 0]
        y[:, 0, 1] = np.where(y[:, 0, 0] > 0, w, np.nan)
    return ObservedData(cfg.model_id, y, shocks.x_panel().copy(), cfg.s)
