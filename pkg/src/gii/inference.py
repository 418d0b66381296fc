"""Sandwich standard errors for GII estimates.

Omega = (G'UG)^{-1} G'U H^{-1} V H^{-1} U G (G'UG)^{-1},  se_j = sqrt(Omega_jj / n)

G: Jacobian of the smoothed binding function at beta_hat; H: Hessian of the
auxiliary average log-likelihood at the data fit; V: covariance of the
data-minus-simulation score contrast; U: the criterion's weighting (W for
Wald, H for LR, H V_lm H for LM).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import auxiliary as aux
from .models import smooth_batch


class InferenceError(ValueError):
    pass


@dataclass
class VarianceParts:
    G: np.ndarray
    H: np.ndarray
    V: np.ndarray
    U: np.ndarray


def estimate_G(crit, beta_hat, rel_tol=1e-10):
    """Central-difference Jacobian of theta_bar at beta_hat."""
    d_theta, d_beta = crit.spec.d_theta, crit.d_beta
    if d_theta < d_beta:
        raise InferenceError(f"order condition fails: d_theta={d_theta} < d_beta={d_beta}")
    G = crit.jacobian(beta_hat, fn=crit.theta_bar)
    check_rank(G, rel_tol)
    return G


def check_rank(G, rel_tol=1e-10):
    sv = np.linalg.svd(G, compute_uv=False)
    if G.shape[0] < G.shape[1] or sv[-1] <= rel_tol * sv[0]:
        raise InferenceError(f"binding-function Jacobian is rank deficient; "
                             f"singular values {np.array2string(sv, precision=3)}")
    return sv


def estimate_H(spec, theta_hat, data_stats):
    """Analytic auxiliary log-likelihood Hessian at the data fit."""
    try:
        return aux.hessian(spec, theta_hat, data_stats)
    except aux.DegenerateDesignError as e:
        raise InferenceError(f"auxiliary fit is not interior: {e}") from None


def estimate_V_from_scores(s_data, s_sim):
    """V = (1/n) sum_i a_i a_i' with a_i = s_i^0 - mean_m s_i^m.

    ``s_data`` is (n, d_theta); ``s_sim`` is (M, n, d_theta) or a running sum
    already divided by M with shape (n, d_theta).
    """
    s_data = np.asarray(s_data, dtype=float)
    s_sim = np.asarray(s_sim, dtype=float)
    mean_sim = s_sim.mean(axis=0) if s_sim.ndim == 3 else s_sim
    if mean_sim.shape != s_data.shape:
        raise InferenceError("data and simulation scores are not aligned by individual")
    a = s_data - mean_sim
    V = a.T @ a / a.shape[0]
    return 0.5 * (V + V.T)


def estimate_V(spec, design, theta_hat, data_Y, theta_m, sim_Y):
    """Score-contrast covariance.

    Data scores are taken at the data fit ``theta_hat``; simulation m's
    scores at its own fit ``theta_m[m]`` on panel ``sim_Y[m]``.
    """
    theta_m = np.atleast_2d(theta_m)
    if theta_m.shape[0] != sim_Y.shape[0]:
        raise InferenceError("one simulated fit is needed per simulated panel")
    s0 = aux.scores_i(spec, design, theta_hat, data_Y)
    acc = np.zeros_like(s0)
    for m in range(sim_Y.shape[0]):
        acc += aux.scores_i(spec, design, theta_m[m], sim_Y[m])
    return estimate_V_from_scores(s0, acc / sim_Y.shape[0])


def sandwich(parts: VarianceParts, n):
    """(Omega, standard errors)."""
    G, H, V, U = (np.asarray(a, dtype=float) for a in (parts.G, parts.H, parts.V, parts.U))
    GUG = G.T @ U @ G
    try:
        GUG_inv = np.linalg.inv(GUG)
        Hinv = np.linalg.inv(H)
    except np.linalg.LinAlgError:
        raise InferenceError("singular G'UG or H in the sandwich") from None
    if np.linalg.cond(GUG) > 1e14:
        raise InferenceError(f"G'UG is numerically singular (cond {np.linalg.cond(GUG):.3g})")
    B = GUG_inv @ G.T @ U @ Hinv
    Omega = B @ V @ B.T
    Omega = 0.5 * (Omega + Omega.T)
    se = np.sqrt(np.clip(np.diag(Omega), 0.0, None) / n)
    return Omega, se


def weight_for(crit, H):
    kind = crit.ccfg.kind
    if kind == "Wald":
        return crit.W
    if kind == "LR":
        return H
    return H @ crit.V @ H


@dataclass
class InferenceResult:
    parts: VarianceParts
    Omega: np.ndarray
    se: np.ndarray

    def report(self, beta_hat, names=None):
        names = names or [f"beta{j + 1}" for j in range(len(beta_hat))]
        cond = {k: float(np.linalg.cond(getattr(self.parts, k))) for k in ("G", "H", "V", "U")}
        return {"beta_hat": dict(zip(names, map(float, beta_hat))),
                "se": dict(zip(names, map(float, self.se))),
                "Omega": self.Omega.tolist(), "condition_numbers": cond}


def criterion_inference(crit, beta_hat, data_Y) -> InferenceResult:
    """Variance parts and standard errors at a terminal estimate of ``crit``.

    The simulation scores use the first grid bandwidth of the criterion and
    its M common shock panels.
    """
    beta_hat = np.asarray(beta_hat, dtype=float)
    spec = crit.spec
    G = estimate_G(crit, beta_hat)
    H = estimate_H(spec, crit.theta_hat, crit.data_stats)
    ev = crit.binding(beta_hat)
    cc = crit.ccfg
    sim_Y = smooth_batch(crit.cfg.with_beta(beta_hat), crit.shocks, slice(1, cc.M + 1),
                         cc.lam, cc.dyn_mode, cc.kernel)
    V = estimate_V(spec, crit.design, crit.theta_hat, data_Y, ev.per_m[0], sim_Y)
    U = weight_for(crit, H)
    parts = VarianceParts(G, H, V, U)
    Omega, se = sandwich(parts, crit.design.n)
    return InferenceResult(parts, Omega, se)
