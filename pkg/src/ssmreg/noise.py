"""Anisotropic Gaussian position noise and Kent orientation noise.

Position errors carry a 3x3 covariance per point set; orientation errors
follow a Kent distribution on the sphere with concentration kappa = 1/sigma^2
and ovalness beta = e * kappa / 2. The Kent normalizer is dropped throughout:
it is constant per data point during correspondence and never enters the
registration objective or the confidence scores.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .mesh import OrientedPoint
from .transform import SimilarityTransform


class NoiseError(ValueError):
    """Invalid noise-model parameters."""


@dataclass(frozen=True)
class PositionNoise:
    """Measurement covariance sigma_x plus optional model-surface covariance."""

    sigma_x: np.ndarray
    sigma_y: np.ndarray = None  # type: ignore[assignment]

    def __post_init__(self):
        sx = np.asarray(self.sigma_x, dtype=float).reshape(3, 3)
        sy = (np.zeros((3, 3)) if self.sigma_y is None
              else np.asarray(self.sigma_y, dtype=float).reshape(3, 3))
        for name, m in (("sigma_x", sx), ("sigma_y", sy)):
            if np.max(np.abs(m - m.T)) > 1e-12:
                raise NoiseError(f"{name} is not symmetric")
        if np.any(np.linalg.eigvalsh(sx) <= 0):
            raise NoiseError("sigma_x must be positive definite")
        if np.any(np.linalg.eigvalsh(sy) < -1e-12):
            raise NoiseError("sigma_y must be positive semidefinite")
        object.__setattr__(self, "sigma_x", sx)
        object.__setattr__(self, "sigma_y", sy)

    @classmethod
    def from_sds(cls, sds_mm, sigma_y=None) -> "PositionNoise":
        """Diagonal covariance from per-axis standard deviations in mm."""
        sds = np.asarray(sds_mm, dtype=float).reshape(3)
        if np.any(sds <= 0):
            raise NoiseError(f"position SDs must be positive, got {sds}")
        return cls(np.diag(sds**2), sigma_y)


@dataclass(frozen=True)
class KentNoise:
    """Kent parameters; gamma1/gamma2 are the elliptical level-set axes.

    The axes are optional: operations that are azimuth-independent (beta = 0)
    or that rebuild frames per point do not need them.
    """

    kappa: float
    beta: float
    gamma1: np.ndarray | None = None
    gamma2: np.ndarray | None = None

    def __post_init__(self):
        if not self.kappa > 0:
            raise NoiseError(f"kappa must be positive, got {self.kappa}")
        if self.beta < 0 or 2 * self.beta > self.kappa * (1 + 1e-12):
            raise NoiseError(f"need 0 <= 2*beta <= kappa, got beta={self.beta}, kappa={self.kappa}")
        if (self.gamma1 is None) != (self.gamma2 is None):
            raise NoiseError("gamma1 and gamma2 must be given together")
        if self.gamma1 is not None:
            g1 = np.asarray(self.gamma1, dtype=float).reshape(3)
            g2 = np.asarray(self.gamma2, dtype=float).reshape(3)
            for g in (g1, g2):
                if abs(np.linalg.norm(g) - 1.0) > 1e-9:
                    raise NoiseError("gamma axes must be unit length")
            if abs(g1 @ g2) > 1e-9:
                raise NoiseError("gamma axes must be orthogonal")
            object.__setattr__(self, "gamma1", g1)
            object.__setattr__(self, "gamma2", g2)
        object.__setattr__(self, "kappa", float(self.kappa))
        object.__setattr__(self, "beta", float(self.beta))

    @property
    def eccentricity(self) -> float:
        return 2.0 * self.beta / self.kappa

    @classmethod
    def from_sd(cls, sigma_deg: float, e: float, gamma1=None, gamma2=None) -> "KentNoise":
        kappa, beta = kent_from_sd(sigma_deg, e)
        return cls(kappa, beta, gamma1, gamma2)


def kent_from_sd(sigma_deg: float, e: float) -> tuple[float, float]:
    """kappa = 1/sigma_rad^2 and beta = e * kappa / 2."""
    if sigma_deg <= 0:
        raise NoiseError(f"orientation SD must be positive, got {sigma_deg}")
    if not 0.0 <= e <= 1.0:
        raise NoiseError(f"eccentricity must be in [0, 1], got {e}")
    kappa = 1.0 / np.radians(sigma_deg) ** 2
    return float(kappa), float(e * kappa / 2.0)


def tangent_frame(n: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Deterministic right-handed orthonormal completion of a unit vector.

    gamma1 is the Gram-Schmidt projection of the global axis least aligned
    with n; gamma2 = n x gamma1, so (gamma1, gamma2, n) is right-handed.
    """
    n = np.asarray(n, dtype=float).reshape(3)
    nn = np.linalg.norm(n)
    if nn < 1e-12:
        raise NoiseError("cannot build a tangent frame on a zero vector")
    n = n / nn
    k = int(np.argmin(np.abs(n)))
    e = np.zeros(3)
    e[k] = 1.0
    g1 = e - (e @ n) * n
    g1 = g1 / np.linalg.norm(g1)
    g2 = np.cross(n, g1)
    return g1, g2


def tangent_frames(normals: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized tangent_frame over rows of unit normals."""
    n = np.asarray(normals, dtype=float)
    k = np.argmin(np.abs(n), axis=1)
    e = np.zeros_like(n)
    e[np.arange(n.shape[0]), k] = 1.0
    g1 = e - np.sum(e * n, axis=1)[:, None] * n
    g1 = g1 / np.linalg.norm(g1, axis=1)[:, None]
    g2 = np.cross(n, g1)
    return g1, g2


def compose_covariance(pos: PositionNoise, r: np.ndarray) -> np.ndarray:
    """Match covariance R sigma_x R^T + sigma_y (scale is not applied)."""
    return r @ pos.sigma_x @ r.T + pos.sigma_y


def mahalanobis_sq(residual: np.ndarray, sigma: np.ndarray) -> float:
    """r^T sigma^{-1} r via Cholesky solve."""
    r = np.asarray(residual, dtype=float).reshape(3)
    try:
        factor = cho_factor(np.asarray(sigma, dtype=float))
    except np.linalg.LinAlgError as exc:
        raise NoiseError(f"covariance is not positive definite: {exc}") from exc
    return float(r @ cho_solve(factor, r))


def match_nll(x: OrientedPoint, y: OrientedPoint, pos: PositionNoise,
              kent: KentNoise, transform: SimilarityTransform) -> float:
    """Negative log match likelihood, dropping terms constant in y.

    0.5 * (y_p - a R x_p - t)^T Sigma^{-1} (...) - kappa * y_n . (R x_n)
    - beta * ((gamma1 . R x_n)^2 - (gamma2 . R x_n)^2), lower is better.
    A perfect match with gamma orthogonal to the matched normal scores -kappa.
    """
    sigma = compose_covariance(pos, transform.r)
    residual = y.position - transform.apply(x.position)
    rxn = transform.rotate(x.normal)
    val = 0.5 * mahalanobis_sq(residual, sigma) - kent.kappa * float(y.normal @ rxn)
    if kent.beta != 0.0:
        if kent.gamma1 is None:
            raise NoiseError("beta > 0 requires gamma axes")
        val -= kent.beta * (float(kent.gamma1 @ rxn) ** 2 - float(kent.gamma2 @ rxn) ** 2)
    return val


def circular_sd(angles: np.ndarray) -> float:
    """Circular standard deviation sqrt(-2 ln Rbar), Rbar = mean cos angle."""
    a = np.asarray(angles, dtype=float).reshape(-1)
    if a.size == 0:
        raise NoiseError("circular_sd of an empty angle list")
    if np.any(a < -1e-9) or np.any(a > np.pi + 1e-9):
        raise NoiseError("angular errors must lie in [0, pi]")
    rbar = float(np.clip(np.mean(np.cos(a)), 1e-12, 1.0))
    return float(np.sqrt(-2.0 * np.log(rbar)))


def mean_angular_error(angles: np.ndarray) -> float:
    """Plain mean of angular errors; alternative dispersion measure."""
    a = np.asarray(angles, dtype=float).reshape(-1)
    if a.size == 0:
        raise NoiseError("mean_angular_error of an empty angle list")
    return float(np.mean(a))


def sample_noise_batch(rng: np.random.Generator, pos: PositionNoise,
                       kent: KentNoise, positions: np.ndarray,
                       normals: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Corrupt oriented points with the given noise models.

    Positions get Cholesky(sigma_x) @ z. Normals get a tangent-plane
    Gaussian with variance 1/(kappa - 2 beta) along gamma1 and
    1/(kappa + 2 beta) along gamma2 (frames built per normal), then are
    renormalized. Valid as a sampler for concentrated distributions.
    """
    if kent.kappa - 2 * kent.beta <= 0:
        raise NoiseError("kappa - 2*beta must be positive to sample orientations")
    p = np.asarray(positions, dtype=float).reshape(-1, 3)
    n = np.asarray(normals, dtype=float).reshape(-1, 3)
    chol = np.linalg.cholesky(pos.sigma_x)
    z = rng.standard_normal(p.shape)
    p_out = p + z @ chol.T
    g1, g2 = tangent_frames(n)
    d1 = rng.standard_normal(len(n)) / np.sqrt(kent.kappa - 2 * kent.beta)
    d2 = rng.standard_normal(len(n)) / np.sqrt(kent.kappa + 2 * kent.beta)
    n_out = n + d1[:, None] * g1 + d2[:, None] * g2
    n_out = n_out / np.linalg.norm(n_out, axis=1)[:, None]
    return p_out, n_out


def sample_noise(rng: np.random.Generator, pos: PositionNoise, kent: KentNoise,
                 x: OrientedPoint) -> OrientedPoint:
    """Single-point convenience wrapper around sample_noise_batch."""
    p, n = sample_noise_batch(rng, pos, kent, x.position[None], x.normal[None])
    return OrientedPoint(p[0], n[0])
