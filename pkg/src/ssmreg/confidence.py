"""Chi-square thresholds, registration success scores, and confidence tiers.

A converged registration is scored by the summed position Mahalanobis
statistic E_p (compared against chi-square with 3 * n_data DOF) and the
summed orientation statistic E_o (compared against 2 * n_data DOF under a
wrapped-Gaussian reading of the Kent model). The smallest ladder
probability at which both tests pass sets the confidence tier.
"""

from __future__ import annotations

import enum

import numpy as np
from scipy.optimize import brentq
from scipy.special import gammainc, ndtri

DEFAULT_LADDER = (0.95, 0.9975, 0.9999, 0.999999)


class ConfidenceError(ValueError):
    """Invalid confidence-test inputs."""


class ConfidenceTier(enum.IntEnum):
    """Graded success classification; lower value = stronger confidence."""

    VERY_CONFIDENT = 0
    CONFIDENT = 1
    SOMEWHAT_CONFIDENT = 2
    LOW_CONFIDENCE = 3
    NO_CONFIDENCE = 4

    def __str__(self) -> str:
        return self.name.lower()

    @classmethod
    def from_string(cls, s: str) -> "ConfidenceTier":
        return cls[s.upper()]


def chi2_cdf(x: float, k: float) -> float:
    """Chi-square CDF via the regularized lower incomplete gamma function."""
    if x <= 0:
        return 0.0
    return float(gammainc(k / 2.0, x / 2.0))


def chi2_inv(p: float, k: int) -> float:
    """Quantile of the chi-square distribution with k degrees of freedom.

    Monotone root-finding on the regularized incomplete gamma function,
    bracketed from a Wilson-Hilferty normal approximation.
    """
    if not 0.0 < p < 1.0:
        raise ConfidenceError(f"p must be in (0, 1), got {p}")
    if k < 1:
        raise ConfidenceError(f"degrees of freedom must be >= 1, got {k}")
    z = float(ndtri(p))
    # Wilson-Hilferty cube approximation, clipped away from zero
    x0 = k * (1.0 - 2.0 / (9.0 * k) + z * np.sqrt(2.0 / (9.0 * k))) ** 3
    x0 = max(x0, 1e-12)
    lo, hi = x0 / 2.0, x0 * 2.0 + 1.0
    while chi2_cdf(lo, k) > p and lo > 1e-300:
        lo /= 8.0
    while chi2_cdf(hi, k) < p:
        hi *= 2.0
        if hi > 1e12:
            raise ConfidenceError(f"failed to bracket chi2_inv({p}, {k})")
    return float(brentq(lambda x: chi2_cdf(x, k) - p, lo, hi,
                        xtol=1e-10, rtol=4e-15, maxiter=200))


def position_score(residuals: np.ndarray, sigma: np.ndarray) -> float:
    """E_p: sum of squared Mahalanobis position residuals.

    residuals are y_p - a R x_p - t over the final inliers, with y_p on the
    final deformed shape; sigma is the composed match covariance.
    """
    r = np.asarray(residuals, dtype=float).reshape(-1, 3)
    if r.shape[0] == 0:
        raise ConfidenceError("position_score needs at least one inlier")
    sol = np.linalg.solve(np.asarray(sigma, dtype=float), r.T)
    return float(np.sum(r.T * sol))


def orientation_score(y_normals: np.ndarray, x_normals_rot: np.ndarray,
                      gamma1_rot: np.ndarray, gamma2_rot: np.ndarray,
                      kappa: float, beta: float) -> float:
    """E_o: summed quadratic form of angular deviations per Kent pair.

    Per inlier, v = [acos(y_n . R x_n), asin(gamma1 . R^T y_n),
    asin(gamma2 . R^T y_n)] weighted by diag(kappa, kappa - 2 beta,
    kappa + 2 beta). All vectors here are supplied rotated into a common
    frame: x normals and gamma axes by R, so gamma_i . R^T y_n is computed
    as (R gamma_i) . y_n. Inverse-trig arguments are clamped to [-1, 1].
    """
    if kappa - 2 * beta < 0:
        raise ConfidenceError("kappa - 2*beta must be nonnegative")
    yn = np.asarray(y_normals, dtype=float).reshape(-1, 3)
    if yn.shape[0] == 0:
        raise ConfidenceError("orientation_score needs at least one inlier")
    c = np.clip(np.sum(yn * x_normals_rot, axis=1), -1.0, 1.0)
    s1 = np.clip(np.sum(gamma1_rot * yn, axis=1), -1.0, 1.0)
    s2 = np.clip(np.sum(gamma2_rot * yn, axis=1), -1.0, 1.0)
    v0 = np.arccos(c)
    v1 = np.arcsin(s1)
    v2 = np.arcsin(s2)
    return float(np.sum(kappa * v0**2 + (kappa - 2 * beta) * v1**2
                        + (kappa + 2 * beta) * v2**2))


TIER_BY_RUNG = (ConfidenceTier.VERY_CONFIDENT, ConfidenceTier.CONFIDENT,
                ConfidenceTier.SOMEWHAT_CONFIDENT, ConfidenceTier.LOW_CONFIDENCE)


def classify(e_p: float, e_o: float, n_data: int,
             ladder: tuple[float, ...] = DEFAULT_LADDER
             ) -> tuple[ConfidenceTier, float | None]:
    """Tier from the smallest ladder p at which both score tests pass.

    Passing at rung p means E_p < chi2_inv(p, 3 n) and E_o < chi2_inv(p, 2 n).
    Returns (tier, p) or (NO_CONFIDENCE, None) when every rung fails.
    """
    if not (np.isfinite(e_p) and np.isfinite(e_o)):
        raise ConfidenceError(f"scores must be finite, got E_p={e_p}, E_o={e_o}")
    if n_data < 1:
        raise ConfidenceError("n_data must be >= 1")
    if len(ladder) > len(TIER_BY_RUNG):
        raise ConfidenceError(f"ladder supports at most {len(TIER_BY_RUNG)} rungs")
    for rung, p in enumerate(ladder):
        if e_p < chi2_inv(p, 3 * n_data) and e_o < chi2_inv(p, 2 * n_data):
            return TIER_BY_RUNG[rung], p
    return ConfidenceTier.NO_CONFIDENCE, None
