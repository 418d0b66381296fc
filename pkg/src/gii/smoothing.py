"""Smoothing kernels and Richardson extrapolation over the bandwidth."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

SQRT_2PI = np.sqrt(2.0 * np.pi)


def _logistic(z):
    return 1.0 / (1.0 + np.exp(-np.clip(z, -700.0, 700.0)))


@dataclass(frozen=True)
class KernelSpec:
    """A smooth cdf K with its first two derivatives."""
    family: str = "logistic"

    def __post_init__(self):
        if self.family not in ("logistic", "gaussian_cdf"):
            raise ValueError(f"unknown kernel family {self.family!r}")

    def K(self, z):
        z = np.asarray(z, dtype=float)
        return _logistic(z) if self.family == "logistic" else ndtr(z)

    def dK(self, z):
        z = np.asarray(z, dtype=float)
        if self.family == "logistic":
            # e / (1 + e)^2 with e = exp(-|z|): symmetric and accurate in both tails
            e = np.exp(-np.abs(z))
            return e / (1.0 + e) ** 2
        return np.exp(-0.5 * z * z) / SQRT_2PI

    def d2K(self, z):
        z = np.asarray(z, dtype=float)
        if self.family == "logistic":
            return -self.dK(z) * np.tanh(0.5 * z)
        return -z * np.exp(-0.5 * z * z) / SQRT_2PI


def _check_lam(lam):
    if not lam > 0:
        raise ValueError(f"bandwidth must be positive, got {lam}")


def kernel_eval(spec: KernelSpec, v, lam):
    """K(v / lam)."""
    _check_lam(lam)
    return spec.K(np.asarray(v, dtype=float) / lam)


def kernel_deriv(spec: KernelSpec, v, lam):
    """d/dv K(v / lam) = K'(v / lam) / lam."""
    _check_lam(lam)
    return spec.dK(np.asarray(v, dtype=float) / lam) / lam


def kernel_deriv2(spec: KernelSpec, v, lam):
    _check_lam(lam)
    return spec.d2K(np.asarray(v, dtype=float) / lam) / lam**2


@dataclass(frozen=True)
class JackknifePlan:
    k: int
    delta: float
    gamma: np.ndarray

    def grid(self, lam):
        """Bandwidths lam, delta*lam, ..., delta^k*lam."""
        return lam * self.delta ** np.arange(self.k + 1)


def jackknife_weights(k=0, delta=0.5) -> JackknifePlan:
    """Weights gamma with sum 1 that cancel the bias terms lam^1..lam^k.

    Solves sum_r gamma_r (delta^r)^j = [j == 0] for j = 0..k.
    """
    if not 0.0 < delta < 1.0:
        raise ValueError(f"delta must lie in (0, 1), got {delta}")
    k = int(k)
    if k < 0:
        raise ValueError("extrapolation order must be >= 0")
    nodes = delta ** np.arange(k + 1)
    A = np.vander(nodes, k + 1, increasing=True).T  # A[j, r] = nodes[r]**j
    rhs = np.zeros(k + 1)
    rhs[0] = 1.0
    gamma = np.linalg.solve(A, rhs)
    return JackknifePlan(k, float(delta), gamma)


def jackknife_combine(values, plan: JackknifePlan):
    """sum_r gamma_r values[r], with values ordered along the descending grid."""
    vals = np.asarray(values, dtype=float)
    if vals.shape[0] != plan.k + 1:
        raise ValueError(f"expected {plan.k + 1} grid values, got {vals.shape[0]}")
    return np.tensordot(plan.gamma, vals, axes=(0, 0))
