"""PCA statistical shape models over corresponding triangle meshes.

The model is built with the snapshot (Gram matrix) method so the
decomposition cost scales with the number of shapes, not with the number
of vertex coordinates. Covariance is normalized by the shape count, so an
eigenvalue is the population variance captured along its mode.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .mesh import BarycentricLocation, MeshError, TriangleMesh

SSM_SCHEMA = "ssmreg/ssm/1"


class SsmError(ValueError):
    """Corpus or model contract violation."""


@dataclass(frozen=True)
class ShapeCorpus:
    """Meshes in dense correspondence: identical topology, matched vertices."""

    shapes: tuple[TriangleMesh, ...]

    def __post_init__(self):
        shapes = tuple(self.shapes)
        if len(shapes) < 2:
            raise SsmError(f"corpus needs at least 2 shapes, got {len(shapes)}")
        ref = shapes[0]
        for k, s in enumerate(shapes[1:], start=1):
            if not ref.same_topology(s):
                raise SsmError(f"shape {k} does not match corpus topology")
        object.__setattr__(self, "shapes", shapes)

    @property
    def n_shapes(self) -> int:
        return len(self.shapes)

    @property
    def n_vertices(self) -> int:
        return self.shapes[0].n_vertices

    def stacked(self) -> np.ndarray:
        """(n_shapes, 3 * n_vertices) row-per-shape vertex matrix."""
        return np.stack([s.vertices.reshape(-1) for s in self.shapes])


@dataclass(frozen=True)
class StatisticalShapeModel:
    """Mean shape plus orthonormal variation modes scaled by sqrt(eigenvalue).

    modes[j] is a unit 3*n_v vector; eigenvalues are sorted descending and
    strictly positive (zero-variance directions are dropped at build time).
    """

    mean_vertices: np.ndarray           # (n_v, 3)
    triangles: np.ndarray               # (m, 3)
    modes: np.ndarray                   # (n_modes, 3 * n_v), orthonormal rows
    eigenvalues: np.ndarray             # (n_modes,), descending, > 0

    def __post_init__(self):
        mv = np.ascontiguousarray(np.asarray(self.mean_vertices, dtype=float))
        tr = np.ascontiguousarray(np.asarray(self.triangles, dtype=np.int64))
        md = np.ascontiguousarray(np.asarray(self.modes, dtype=float))
        ev = np.ascontiguousarray(np.asarray(self.eigenvalues, dtype=float))
        if md.ndim != 2 or md.shape[1] != 3 * mv.shape[0]:
            raise SsmError(f"modes must be (n_m, {3 * mv.shape[0]}), got {md.shape}")
        if ev.shape != (md.shape[0],):
            raise SsmError("eigenvalue count does not match mode count")
        if np.any(np.diff(ev) > 0):
            raise SsmError("eigenvalues must be sorted descending")
        if ev.size and ev[-1] <= 0:
            raise SsmError("retained eigenvalues must be positive")
        if md.size:
            gram = md @ md.T
            if np.max(np.abs(gram - np.eye(md.shape[0]))) > 1e-8:
                raise SsmError("modes are not orthonormal within 1e-8")
        for arr in (mv, tr, md, ev):
            arr.setflags(write=False)
        object.__setattr__(self, "mean_vertices", mv)
        object.__setattr__(self, "triangles", tr)
        object.__setattr__(self, "modes", md)
        object.__setattr__(self, "eigenvalues", ev)

    @property
    def n_modes(self) -> int:
        return self.modes.shape[0]

    @property
    def n_vertices(self) -> int:
        return self.mean_vertices.shape[0]

    @property
    def weighted_modes(self) -> np.ndarray:
        """w_j = sqrt(lambda_j) * m_j, shape (n_modes, 3 * n_v)."""
        return np.sqrt(self.eigenvalues)[:, None] * self.modes

    def mean_mesh(self) -> TriangleMesh:
        return TriangleMesh(self.mean_vertices, self.triangles)

    def modes_per_vertex(self, n_m: int | None = None) -> np.ndarray:
        """Weighted modes as (n_m, n_v, 3) displacement fields."""
        n_m = self.n_modes if n_m is None else n_m
        return self.weighted_modes[:n_m].reshape(n_m, self.n_vertices, 3)


def build_ssm(corpus: ShapeCorpus) -> StatisticalShapeModel:
    """PCA of the stacked vertex vectors via the n_s x n_s Gram matrix.

    Uses 1/n_s covariance normalization; at most n_s - 1 eigenvalues are
    nonzero and only those modes are retained. Mode signs are fixed so each
    mode's largest-magnitude component is positive.
    """
    x = corpus.stacked()
    n_s = x.shape[0]
    mean = x.mean(axis=0)
    xc = x - mean
    # economy SVD of the n_s x 3n_v snapshot matrix: same cost scaling as
    # the explicit Gram matrix, identical eigenvalues (lambda = s^2 / n_s),
    # but the right singular vectors stay orthonormal to machine precision
    # even when the spectrum spans many orders of magnitude
    _, svals, vt = np.linalg.svd(xc, full_matrices=False)
    evals = svals**2 / n_s

    cutoff = max(1e-12, 1e-12 * (evals[0] if evals.size else 0.0))
    keep = evals > cutoff
    evals = evals[keep]
    modes = vt[keep]
    # deterministic sign: largest-magnitude component positive
    for j in range(modes.shape[0]):
        k = int(np.argmax(np.abs(modes[j])))
        if modes[j, k] < 0:
            modes[j] = -modes[j]

    return StatisticalShapeModel(
        mean_vertices=mean.reshape(-1, 3),
        triangles=corpus.shapes[0].triangles,
        modes=modes,
        eigenvalues=evals,
    )


def instantiate(model: StatisticalShapeModel, s: np.ndarray) -> TriangleMesh:
    """Deformed shape mean + sum_j s_j w_j; normals recomputed."""
    s = np.asarray(s, dtype=float).reshape(-1)
    if s.size > model.n_modes:
        raise SsmError(f"{s.size} shape parameters but model retains {model.n_modes} modes")
    flat = model.mean_vertices.reshape(-1) + s @ model.weighted_modes[:s.size]
    return TriangleMesh(flat.reshape(-1, 3), model.triangles)


def project(model: StatisticalShapeModel, shape: TriangleMesh,
            n_m: int | None = None) -> np.ndarray:
    """Shape parameters (SD units) of a corresponding shape.

    s_j = m_j . (V - mean) / sqrt(lambda_j), the least-squares coefficients
    on the weighted modes.
    """
    if n_m is None:
        n_m = model.n_modes
    if n_m > model.n_modes:
        raise SsmError(f"requested {n_m} modes but model retains {model.n_modes}")
    if shape.n_vertices != model.n_vertices or not np.array_equal(
            shape.triangles, model.triangles):
        raise SsmError("shape topology does not match the model")
    resid = shape.vertices.reshape(-1) - model.mean_vertices.reshape(-1)
    return (model.modes[:n_m] @ resid) / np.sqrt(model.eigenvalues[:n_m])


def deform_matched_point(model: StatisticalShapeModel, loc: BarycentricLocation,
                         s: np.ndarray) -> np.ndarray:
    """Deformed position of a barycentric surface location.

    Equals the barycentric combination of the three deformed triangle
    vertices, which (by linearity) equals the same location interpolated on
    the instantiated shape.
    """
    s = np.asarray(s, dtype=float).reshape(-1)
    if s.size > model.n_modes:
        raise SsmError(f"{s.size} shape parameters but model retains {model.n_modes} modes")
    if not 0 <= loc.triangle_index < model.triangles.shape[0]:
        raise MeshError(f"triangle index {loc.triangle_index} out of range")
    idx = model.triangles[loc.triangle_index]
    corners = model.mean_vertices[idx]
    if s.size:
        corners = corners + np.einsum("j,jkd->kd", s, model.modes_per_vertex(s.size)[:, idx, :])
    return loc.mu @ corners


def save_ssm(model: StatisticalShapeModel, path) -> None:
    payload = {
        "schema": SSM_SCHEMA,
        "mean_vertices": model.mean_vertices.tolist(),
        "triangles": model.triangles.tolist(),
        "eigenvalues": model.eigenvalues.tolist(),
        "modes": model.modes.tolist(),
    }
    with open(path, "w", encoding="ascii") as fh:
        json.dump(payload, fh, sort_keys=True, separators=(",", ":"))
        fh.write("\n")


def load_ssm(path) -> StatisticalShapeModel:
    with open(path, "r", encoding="ascii") as fh:
        payload = json.load(fh)
    if payload.get("schema") != SSM_SCHEMA:
        raise SsmError(f"unsupported shape-model schema {payload.get('schema')!r}")
    mean = np.array(payload["mean_vertices"], dtype=float)
    n_m = len(payload["eigenvalues"])
    if n_m:
        modes = np.array(payload["modes"], dtype=float).reshape(n_m, -1)
    else:
        modes = np.zeros((0, 3 * mean.shape[0]))
    return StatisticalShapeModel(
        mean_vertices=mean,
        triangles=np.array(payload["triangles"], dtype=np.int64),
        modes=modes,
        eigenvalues=np.array(payload["eigenvalues"], dtype=float),
    )
