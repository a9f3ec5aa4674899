"""Deformable most-likely oriented-point registration.

Iterates three phases until the pose and shape parameters stop moving:
probabilistic correspondence against the currently deformed model surface,
two-stage outlier rejection (position chi-square test, then an angular test
at three circular standard deviations), and joint box-constrained
quasi-Newton optimization of similarity transform and shape parameters.
With zero modes this reduces to rigid most-likely-point registration with
a scale term.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cholesky, solve_triangular
from scipy.optimize import minimize

from . import _kernels
from .confidence import (DEFAULT_LADDER, ConfidenceTier, chi2_inv, classify,
                         orientation_score)
from .mesh import (BarycentricLocation, OrientedPoint, SurfaceAccel,
                   TriangleMesh)
from .noise import (KentNoise, NoiseError, PositionNoise, compose_covariance,
                    circular_sd, tangent_frames)
from .ssm import StatisticalShapeModel, instantiate
from .transform import (SimilarityTransform, rotation_angle_deg,
                        rotation_from_axis_angle, so3_left_jacobian)


class RegistrationError(RuntimeError):
    """Degenerate data or optimizer failure."""


@dataclass(frozen=True)
class Correspondence:
    """One data point's most-likely match on the deformed model surface."""

    data_index: int
    y: OrientedPoint
    loc: BarycentricLocation
    outlier: bool
    sq_mahalanobis: float
    angular_error: float


@dataclass(frozen=True)
class RegistrationConfig:
    n_m: int
    position_noise: PositionNoise
    kent: KentNoise
    scale_bounds: tuple[float, float] = (0.9, 1.1)
    s_bound: float = 3.0
    p_outlier: float = 0.95
    max_iterations: int = 100
    tol_rotation_deg: float = 0.01
    tol_translation_mm: float = 0.01
    tol_scale: float = 1e-4
    tol_shape: float = 1e-3
    min_points: int = 10
    initial_transform: SimilarityTransform | None = None
    ladder: tuple[float, ...] = DEFAULT_LADDER

    def __post_init__(self):
        lo, hi = self.scale_bounds
        if not (0 < lo <= 1.0 <= hi):
            raise ValueError(f"scale bounds must satisfy 0 < lo <= 1 <= hi, got {self.scale_bounds}")
        if not 0 < self.p_outlier < 1:
            raise ValueError(f"p_outlier must be in (0, 1), got {self.p_outlier}")
        if self.n_m < 0:
            raise ValueError("mode count must be nonnegative")
        if self.s_bound <= 0:
            raise ValueError("s_bound must be positive")


@dataclass
class RegistrationResult:
    transform: SimilarityTransform
    s: np.ndarray
    inliers: list[Correspondence]
    iterations: int
    converged: bool
    e_p: float
    e_o: float
    tier: ConfidenceTier
    p_passed: float | None
    sigma_circ: float
    trace: list[dict] = field(default_factory=list)

    @property
    def n_inliers(self) -> int:
        return len(self.inliers)


def as_point_arrays(data) -> tuple[np.ndarray, np.ndarray]:
    """Accepts a sequence of OrientedPoint, an (n, 6) array, or a (P, N) pair."""
    if isinstance(data, np.ndarray):
        arr = np.asarray(data, dtype=float)
        if arr.ndim != 2 or arr.shape[1] != 6:
            raise ValueError(f"point array must be (n, 6), got {arr.shape}")
        p, n = arr[:, :3], arr[:, 3:]
    elif isinstance(data, tuple) and len(data) == 2:
        p = np.asarray(data[0], dtype=float)
        n = np.asarray(data[1], dtype=float)
    else:
        p = np.array([pt.position for pt in data], dtype=float)
        n = np.array([pt.normal for pt in data], dtype=float)
    norms = np.linalg.norm(n, axis=1)
    if np.any(norms < 1e-12):
        raise ValueError("data contains zero-length normals")
    return np.ascontiguousarray(p), np.ascontiguousarray(n / norms[:, None])


class MostLikelyMatcher:
    """Batch most-likely correspondence against one deformed model snapshot.

    The match covariance Sigma = R sigma_x R^T + sigma_y is fixed for the
    snapshot. Queries run in Sigma-whitened coordinates, where the closest
    point in a triangle is the exact minimizer of the Mahalanobis position
    term; the orientation term is evaluated at that point's interpolated
    normal. The elliptical (beta) term of the match likelihood vanishes
    here because the Kent frame rides on the rotated data normal.
    """

    def __init__(self, model: TriangleMesh, pos: PositionNoise,
                 kappa: float, transform: SimilarityTransform):
        if model.n_triangles == 0:
            raise RegistrationError("empty model mesh")
        self.model = model
        self.transform = transform
        self.kappa = float(kappa)
        sigma = compose_covariance(pos, transform.r)
        try:
            self._chol = cholesky(sigma, lower=True)
        except np.linalg.LinAlgError as exc:
            raise NoiseError(f"match covariance not positive definite: {exc}") from exc
        self._verts_w = np.ascontiguousarray(
            solve_triangular(self._chol, model.vertices.T, lower=True).T)
        self._nodes = _kernels.build_bvh(self._verts_w, model.triangles)

    def whiten(self, points: np.ndarray) -> np.ndarray:
        return solve_triangular(self._chol, np.asarray(points, dtype=float).T,
                                lower=True).T

    def match_batch(self, positions: np.ndarray, normals: np.ndarray):
        """Returns (nll, tri, sq_mahal, bary, y_pos, y_nrm, angular_error)."""
        pw = np.ascontiguousarray(self.whiten(self.transform.apply(positions)))
        nrot = np.ascontiguousarray(self.transform.rotate(normals))
        nll, tri, d2, bary = _kernels.most_likely_batch(
            *self._nodes, self._verts_w, self.model.triangles,
            self.model.vertex_normals, pw, nrot, self.kappa)
        corners = self.model.vertices[self.model.triangles[tri]]
        y_pos = np.einsum("nk,nkj->nj", bary, corners)
        ncorners = self.model.vertex_normals[self.model.triangles[tri]]
        y_nrm = np.einsum("nk,nkj->nj", bary, ncorners)
        y_nrm = y_nrm / np.linalg.norm(y_nrm, axis=1)[:, None]
        ang = np.arccos(np.clip(np.sum(y_nrm * nrot, axis=1), -1.0, 1.0))
        return nll, tri, d2, bary, y_pos, y_nrm, ang

    def match_brute_force(self, positions: np.ndarray, normals: np.ndarray):
        """All-triangle oracle with identical per-triangle arithmetic."""
        pw = self.whiten(self.transform.apply(positions))
        nrot = self.transform.rotate(normals)
        n = pw.shape[0]
        nll = np.empty(n)
        tri = np.empty(n, dtype=np.int64)
        d2 = np.empty(n)
        bary = np.empty((n, 3))
        for i in range(n):
            nll[i], tri[i], d2[i], bary[i, 0], bary[i, 1], bary[i, 2] = (
                _kernels.most_likely_brute(
                    self._verts_w, self.model.triangles,
                    self.model.vertex_normals,
                    pw[i, 0], pw[i, 1], pw[i, 2],
                    nrot[i, 0], nrot[i, 1], nrot[i, 2], self.kappa))
        return nll, tri, d2, bary


def find_most_likely_match(x: OrientedPoint, model: TriangleMesh,
                           pos: PositionNoise, kent: KentNoise,
                           transform: SimilarityTransform,
                           matcher: MostLikelyMatcher | None = None
                           ) -> Correspondence:
    """Surface point minimizing the match negative log likelihood."""
    if matcher is None:
        matcher = MostLikelyMatcher(model, pos, kent.kappa, transform)
    _, tri, d2, bary, y_pos, y_nrm, ang = matcher.match_batch(
        x.position[None], x.normal[None])
    return Correspondence(
        data_index=0,
        y=OrientedPoint(y_pos[0], y_nrm[0]),
        loc=BarycentricLocation(int(tri[0]), bary[0]),
        outlier=False,
        sq_mahalanobis=float(d2[0]),
        angular_error=float(ang[0]),
    )


def _reject_arrays(sq_mahal: np.ndarray, ang: np.ndarray, p: float
                   ) -> tuple[np.ndarray, float]:
    """Two-stage outlier flags plus the circular SD of stage-1 survivors."""
    if sq_mahal.size == 0:
        raise RegistrationError("no correspondences to filter")
    thresh = chi2_inv(p, 3)
    keep = sq_mahal <= thresh
    if not np.any(keep):
        raise RegistrationError(
            f"all {sq_mahal.size} correspondences rejected by the position test "
            f"(min sq-Mahalanobis {sq_mahal.min():.3g} > {thresh:.4g})")
    sigma = circular_sd(ang[keep])
    theta_thresh = min(3.0 * sigma, np.pi)
    keep2 = keep & (np.cos(ang) >= np.cos(theta_thresh) - 1e-12)
    if not np.any(keep2):
        raise RegistrationError("all correspondences rejected by the angular test")
    return ~keep2, sigma


def reject_outliers(corrs: list[Correspondence], p: float
                    ) -> tuple[list[Correspondence], float]:
    """Re-flag correspondences; returns (updated list, sigma_circ).

    Stage 1 flags matches whose stored squared Mahalanobis distance exceeds
    chi2_inv(p, 3); stage 2 flags stage-1 survivors whose match angle
    exceeds three circular SDs of the survivors' angular errors.
    """
    sq = np.array([c.sq_mahalanobis for c in corrs])
    ang = np.array([c.angular_error for c in corrs])
    flags, sigma = _reject_arrays(sq, ang, p)
    out = [Correspondence(c.data_index, c.y, c.loc, bool(f), c.sq_mahalanobis,
                          c.angular_error)
           for c, f in zip(corrs, flags)]
    return out, sigma


@dataclass
class _Phase:
    """Fixed quantities for one joint optimization phase."""

    x_p: np.ndarray          # (n, 3) inlier data positions
    x_n: np.ndarray          # (n, 3) inlier data normals
    g1: np.ndarray           # (n, 3) Kent major axes (data frame)
    g2: np.ndarray           # (n, 3) Kent minor axes (data frame)
    y_n: np.ndarray          # (n, 3) matched model normals
    c: np.ndarray            # (n, 3) matched points on the mean shape
    m: np.ndarray            # (n, n_m, 3) mode displacements at the matches
    sigma_inv: np.ndarray    # (3, 3)
    kappa: float
    beta: float
    r0: np.ndarray           # (3, 3) base rotation of the local chart


def build_phase(model: StatisticalShapeModel, n_m: int,
                x_p: np.ndarray, x_n: np.ndarray,
                g1: np.ndarray, g2: np.ndarray,
                tri: np.ndarray, bary: np.ndarray, y_n: np.ndarray,
                sigma: np.ndarray, kappa: float, beta: float,
                r0: np.ndarray) -> _Phase:
    corners = model.triangles[tri]                     # (n, 3)
    c = np.einsum("nk,nkj->nj", bary, model.mean_vertices[corners])
    if n_m:
        wv = model.modes_per_vertex(n_m)               # (n_m, n_v, 3)
        m = np.einsum("nk,mnkj->nmj", bary, wv[:, corners, :])
    else:
        m = np.zeros((len(tri), 0, 3))
    return _Phase(x_p=x_p, x_n=x_n, g1=g1, g2=g2, y_n=y_n, c=c, m=m,
                  sigma_inv=np.linalg.inv(sigma), kappa=kappa, beta=beta,
                  r0=r0)


def cost_and_gradient(params: np.ndarray, phase: _Phase
                      ) -> tuple[float, np.ndarray]:
    """Registration objective and its analytic gradient.

    params = [a, phi (axis-angle increment on the phase's base rotation),
    t, s]. The objective is the summed position Mahalanobis term, the
    kappa * (1 - cos) and elliptical orientation terms, and the 0.5*|s|^2
    shape regularizer. The match covariance is held fixed for the phase.
    """
    a = params[0]
    phi = params[1:4]
    t = params[4:7]
    s = params[7:]
    r = rotation_from_axis_angle(phi) @ phase.r0

    u = phase.x_p @ r.T
    m_pts = phase.c if s.size == 0 else phase.c + np.einsum("nmj,m->nj", phase.m, s)
    resid = m_pts - a * u - t
    q = resid @ phase.sigma_inv
    cost_pos = 0.5 * float(np.sum(resid * q))

    u_n = phase.x_n @ r.T
    cosang = np.sum(phase.y_n * u_n, axis=1)
    cost_k = phase.kappa * float(np.sum(1.0 - cosang))

    w = phase.y_n @ r                                  # rows are R^T y_n
    b1 = np.sum(phase.g1 * w, axis=1)
    b2 = np.sum(phase.g2 * w, axis=1)
    cost_b = -phase.beta * float(np.sum(b1**2 - b2**2))

    cost = cost_pos + cost_k + cost_b + 0.5 * float(s @ s)

    jl = so3_left_jacobian(phi)
    grad = np.empty_like(params)
    grad[0] = -float(np.sum(u * q))
    grad[4:7] = -q.sum(axis=0)
    if s.size:
        grad[7:] = np.einsum("nmj,nj->m", phase.m, q) + s

    gphi = -a * np.cross(u, q).sum(axis=0)
    gphi += -phase.kappa * np.cross(u_n, phase.y_n).sum(axis=0)
    if phase.beta != 0.0:
        h = b1[:, None] * phase.g1 - b2[:, None] * phase.g2
        gphi += 2.0 * phase.beta * np.cross(phase.y_n, h @ r.T).sum(axis=0)
    grad[1:4] = jl.T @ gphi
    return cost, grad


def optimize_parameters(phase: _Phase, a0: float, t0: np.ndarray,
                        s0: np.ndarray, config: RegistrationConfig
                        ) -> tuple[SimilarityTransform, np.ndarray, float]:
    """Box-constrained quasi-Newton minimization of the phase objective.

    Scale stays inside config.scale_bounds and each shape parameter inside
    [-s_bound, s_bound]; rotation moves through an unconstrained local
    axis-angle chart composed onto the phase's base rotation.
    """
    x0 = np.concatenate([[a0], np.zeros(3), t0, s0])
    bounds = ([(config.scale_bounds[0], config.scale_bounds[1])]
              + [(None, None)] * 6
              + [(-config.s_bound, config.s_bound)] * s0.size)
    f0, _ = cost_and_gradient(x0, phase)
    res = minimize(cost_and_gradient, x0, args=(phase,), jac=True,
                   method="L-BFGS-B", bounds=bounds,
                   options={"maxiter": 200, "ftol": 1e-14, "gtol": 1e-10})
    if res.fun > f0 + 1e-9 * (1.0 + abs(f0)):
        raise RegistrationError(
            f"optimizer failed to decrease the objective: start {f0:.6g}, "
            f"end {res.fun:.6g}, status {res.status} ({res.message})")
    x = res.x
    transform = SimilarityTransform(
        float(np.clip(x[0], *config.scale_bounds)),
        rotation_from_axis_angle(x[1:4]) @ phase.r0,
        x[4:7])
    s = np.clip(x[7:], -config.s_bound, config.s_bound)
    return transform, s, float(res.fun)


def register(data, model: StatisticalShapeModel,
             config: RegistrationConfig) -> RegistrationResult:
    """Full registration loop; deterministic given identical inputs.

    data may be a sequence of OrientedPoint, an (n, 6) array of positions
    and normals, or a (positions, normals) pair.
    """
    x_p, x_n = as_point_arrays(data)
    n_pts = x_p.shape[0]
    if n_pts < config.min_points:
        raise RegistrationError(f"need at least {config.min_points} points, got {n_pts}")
    if config.n_m > model.n_modes:
        raise RegistrationError(
            f"config requests {config.n_m} modes but the model retains {model.n_modes}")

    g1, g2 = tangent_frames(x_n)
    kappa, beta = config.kent.kappa, config.kent.beta
    transform = config.initial_transform or SimilarityTransform.identity()
    s = np.zeros(config.n_m)

    mesh_s: TriangleMesh | None = None
    s_of_mesh: np.ndarray | None = None
    trace: list[dict] = []
    converged = False
    iterations = 0

    def deformed() -> TriangleMesh:
        nonlocal mesh_s, s_of_mesh
        if mesh_s is None or not np.array_equal(s, s_of_mesh):
            mesh_s = instantiate(model, s)
            s_of_mesh = s.copy()
        return mesh_s

    def correspond(current: TriangleMesh):
        matcher = MostLikelyMatcher(current, config.position_noise, kappa, transform)
        _, tri, d2, bary, y_pos, y_nrm, ang = matcher.match_batch(x_p, x_n)
        flags, sigma_circ = _reject_arrays(d2, ang, config.p_outlier)
        return tri, d2, bary, y_pos, y_nrm, ang, flags, sigma_circ

    for iterations in range(1, config.max_iterations + 1):
        current = deformed()
        tri, d2, bary, y_pos, y_nrm, ang, flags, sigma_circ = correspond(current)
        keep = ~flags

        sigma = compose_covariance(config.position_noise, transform.r)
        phase = build_phase(model, config.n_m, x_p[keep], x_n[keep],
                            g1[keep], g2[keep], tri[keep], bary[keep],
                            y_nrm[keep], sigma, kappa, beta, transform.r)
        new_transform, new_s, cost = optimize_parameters(
            phase, transform.a, transform.t, s, config)

        d_rot = rotation_angle_deg(new_transform.r @ transform.r.T)
        d_t = float(np.linalg.norm(new_transform.t - transform.t))
        d_a = abs(new_transform.a - transform.a)
        d_s = float(np.max(np.abs(new_s - s))) if s.size else 0.0
        transform, s = new_transform, new_s
        trace.append({
            "iteration": iterations, "inliers": int(keep.sum()),
            "cost": cost, "a": transform.a, "sigma_circ": sigma_circ,
            "delta_rot_deg": d_rot, "delta_t_mm": d_t,
            "delta_scale": d_a, "delta_s_max": d_s,
        })
        if (d_rot < config.tol_rotation_deg and d_t < config.tol_translation_mm
                and d_a < config.tol_scale and d_s < config.tol_shape):
            converged = True
            break

    # final correspondence at the converged state for scoring
    current = deformed()
    tri, d2, bary, y_pos, y_nrm, ang, flags, sigma_circ = correspond(current)
    keep = ~flags
    e_p = float(np.sum(d2[keep]))
    rot = transform.r
    e_o = orientation_score(y_nrm[keep], x_n[keep] @ rot.T,
                            g1[keep] @ rot.T, g2[keep] @ rot.T, kappa, beta)
    n_in = int(keep.sum())
    tier, p_passed = classify(e_p, e_o, n_in, config.ladder)

    inliers = [
        Correspondence(int(i), OrientedPoint(y_pos[i], y_nrm[i]),
                       BarycentricLocation(int(tri[i]), bary[i]),
                       False, float(d2[i]), float(ang[i]))
        for i in np.flatnonzero(keep)
    ]
    return RegistrationResult(
        transform=transform, s=s, inliers=inliers, iterations=iterations,
        converged=converged, e_p=e_p, e_o=e_o, tier=tier, p_passed=p_passed,
        sigma_circ=sigma_circ, trace=trace)


def registration_scores(data, model: StatisticalShapeModel,
                        result: RegistrationResult,
                        config: RegistrationConfig) -> tuple[float, float]:
    """Recompute (E_p, E_o) for a finished registration from its inliers.

    Independent of the bookkeeping inside register(): rebuilds residuals
    from the stored matched points and the final transform.
    """
    x_p, x_n = as_point_arrays(data)
    idx = np.array([c.data_index for c in result.inliers])
    y_p = np.array([c.y.position for c in result.inliers])
    y_n = np.array([c.y.normal for c in result.inliers])
    resid = y_p - result.transform.apply(x_p[idx])
    sigma = compose_covariance(config.position_noise, result.transform.r)
    sol = np.linalg.solve(sigma, resid.T)
    e_p = float(np.sum(resid.T * sol))
    g1, g2 = tangent_frames(x_n[idx])
    rot = result.transform.r
    e_o = orientation_score(y_n, x_n[idx] @ rot.T, g1 @ rot.T, g2 @ rot.T,
                            config.kent.kappa, config.kent.beta)
    return e_p, e_o
