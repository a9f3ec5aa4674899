"""Triangle meshes: ASCII PLY I/O, normals, spatial queries, Hausdorff distance.

Meshes are immutable after construction (arrays are marked read-only), so
query structures can be shared freely across workers.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _kernels


class MeshError(ValueError):
    """Malformed mesh data or mesh file."""


def _as_unit_rows(arr: np.ndarray, tol: float = 1e-9) -> np.ndarray:
    norms = np.linalg.norm(arr, axis=1)
    if np.any(norms < 1e-12):
        raise MeshError("zero-length normal")
    if np.any(np.abs(norms - 1.0) > tol):
        arr = arr / norms[:, None]
    return arr


@dataclass(frozen=True)
class OrientedPoint:
    """A position in mm plus a unit surface normal."""

    position: np.ndarray
    normal: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.position, dtype=float).reshape(3)
        n = np.asarray(self.normal, dtype=float).reshape(3)
        nn = np.linalg.norm(n)
        if abs(nn - 1.0) > 1e-9:
            if nn < 1e-12:
                raise MeshError("oriented point has zero normal")
            n = n / nn
        object.__setattr__(self, "position", p)
        object.__setattr__(self, "normal", n)


@dataclass(frozen=True)
class BarycentricLocation:
    """A point on a mesh: triangle index plus barycentric weights."""

    triangle_index: int
    mu: np.ndarray

    def __post_init__(self):
        mu = np.asarray(self.mu, dtype=float).reshape(3)
        if np.any(mu < -1e-9) or np.any(mu > 1.0 + 1e-9):
            raise MeshError(f"barycentric weights outside [0, 1]: {mu}")
        if abs(mu.sum() - 1.0) > 1e-9:
            raise MeshError(f"barycentric weights sum to {mu.sum()}, not 1")
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "triangle_index", int(self.triangle_index))


@dataclass(frozen=True)
class TriangleMesh:
    """Vertices (mm), triangle index triples, and unit vertex normals."""

    vertices: np.ndarray
    triangles: np.ndarray
    vertex_normals: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        v = np.ascontiguousarray(np.asarray(self.vertices, dtype=float))
        t = np.ascontiguousarray(np.asarray(self.triangles, dtype=np.int64))
        if v.ndim != 2 or v.shape[1] != 3:
            raise MeshError(f"vertices must be (n, 3), got {v.shape}")
        if t.ndim != 2 or t.shape[1] != 3:
            raise MeshError(f"triangles must be (m, 3), got {t.shape}")
        if t.shape[0] == 0:
            raise MeshError("mesh has no triangles")
        if t.min() < 0 or t.max() >= v.shape[0]:
            raise MeshError(
                f"triangle index out of range: max {t.max()} with {v.shape[0]} vertices")
        areas = _triangle_areas(v, t)
        if np.any(areas <= 0.0):
            bad = int(np.argmin(areas))
            raise MeshError(f"degenerate triangle {bad} (area {areas[bad]:g})")
        if self.vertex_normals is None:
            n = compute_vertex_normals(v, t)
        else:
            n = np.ascontiguousarray(np.asarray(self.vertex_normals, dtype=float))
            if n.shape != v.shape:
                raise MeshError("vertex_normals shape mismatch")
            n = np.ascontiguousarray(_as_unit_rows(n))
        for arr in (v, t, n):
            arr.setflags(write=False)
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "triangles", t)
        object.__setattr__(self, "vertex_normals", n)

    @property
    def n_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def n_triangles(self) -> int:
        return self.triangles.shape[0]

    def same_topology(self, other: "TriangleMesh") -> bool:
        return (self.n_vertices == other.n_vertices
                and self.triangles.shape == other.triangles.shape
                and bool(np.array_equal(self.triangles, other.triangles)))

    def with_vertices(self, vertices: np.ndarray) -> "TriangleMesh":
        """Same topology, new vertex positions; normals recomputed."""
        return TriangleMesh(vertices, self.triangles)


def _triangle_areas(vertices: np.ndarray, triangles: np.ndarray) -> np.ndarray:
    a = vertices[triangles[:, 0]]
    e1 = vertices[triangles[:, 1]] - a
    e2 = vertices[triangles[:, 2]] - a
    return 0.5 * np.linalg.norm(np.cross(e1, e2), axis=1)


def face_normals(vertices: np.ndarray, triangles: np.ndarray,
                 normalize: bool = True) -> np.ndarray:
    a = vertices[triangles[:, 0]]
    cr = np.cross(vertices[triangles[:, 1]] - a, vertices[triangles[:, 2]] - a)
    if normalize:
        cr = cr / np.linalg.norm(cr, axis=1)[:, None]
    return cr


def compute_vertex_normals(vertices: np.ndarray, triangles: np.ndarray) -> np.ndarray:
    """Area-weighted average of incident face normals, normalized.

    The cross product of the triangle edges carries the area weight, so
    accumulating raw cross products gives the area weighting directly.
    Raises on vertices not referenced by any triangle.
    """
    vertices = np.asarray(vertices, dtype=float)
    triangles = np.asarray(triangles, dtype=np.int64)
    cr = face_normals(vertices, triangles, normalize=False)
    acc = np.zeros_like(vertices)
    for k in range(3):
        np.add.at(acc, triangles[:, k], cr)
    norms = np.linalg.norm(acc, axis=1)
    if np.any(norms < 1e-12):
        bad = int(np.argmin(norms))
        raise MeshError(f"vertex {bad} has no usable normal (isolated or cancelling faces)")
    return acc / norms[:, None]


def point_at(mesh: TriangleMesh, loc: BarycentricLocation) -> OrientedPoint:
    """Barycentric interpolation of position and (renormalized) normal."""
    if not 0 <= loc.triangle_index < mesh.n_triangles:
        raise MeshError(f"triangle index {loc.triangle_index} out of range")
    idx = mesh.triangles[loc.triangle_index]
    pos = loc.mu @ mesh.vertices[idx]
    nrm = loc.mu @ mesh.vertex_normals[idx]
    return OrientedPoint(pos, nrm)


def interpolate_positions(vertices: np.ndarray, triangles: np.ndarray,
                          tri_idx: np.ndarray, mu: np.ndarray) -> np.ndarray:
    """Vectorized barycentric positions for many (triangle, mu) pairs."""
    corners = vertices[triangles[tri_idx]]           # (n, 3, 3)
    return np.einsum("nk,nkj->nj", mu, corners)


class SurfaceAccel:
    """BVH over the triangles of a fixed vertex buffer.

    Read-only after construction; safe to query from multiple threads.
    """

    def __init__(self, vertices: np.ndarray, triangles: np.ndarray):
        vertices = np.ascontiguousarray(vertices, dtype=float)
        triangles = np.ascontiguousarray(triangles, dtype=np.int64)
        if triangles.shape[0] == 0:
            raise MeshError("cannot build query structure over empty mesh")
        self.vertices = vertices
        self.triangles = triangles
        self._nodes = _kernels.build_bvh(vertices, triangles)

    @classmethod
    def from_mesh(cls, mesh: TriangleMesh) -> "SurfaceAccel":
        return cls(mesh.vertices, mesh.triangles)

    def closest(self, point: np.ndarray):
        """(closest point, BarycentricLocation, distance) for one query."""
        p = np.asarray(point, dtype=float).reshape(3)
        d2, tri, u, v, w = _kernels.closest_point_query(
            *self._nodes, self.vertices, self.triangles, p[0], p[1], p[2])
        mu = np.array([u, v, w])
        q = mu @ self.vertices[self.triangles[tri]]
        return q, BarycentricLocation(int(tri), mu), float(np.sqrt(d2))

    def closest_batch(self, points: np.ndarray):
        """(distances, triangle ids, barycentric weights) for many queries."""
        pts = np.ascontiguousarray(points, dtype=float)
        d2, tri, bary = _kernels.closest_point_batch(
            *self._nodes, self.vertices, self.triangles, pts)
        return np.sqrt(d2), tri, bary

    def rays_blocked(self, origin: np.ndarray, targets: np.ndarray,
                     skip_tris: np.ndarray) -> np.ndarray:
        """True where the segment origin->target hits the mesh first."""
        return _kernels.rays_blocked_batch(
            *self._nodes, self.vertices, self.triangles,
            np.asarray(origin, dtype=float).reshape(3),
            np.ascontiguousarray(targets, dtype=float),
            np.ascontiguousarray(skip_tris, dtype=np.int64))


def closest_point_on_mesh(point: np.ndarray, mesh: TriangleMesh,
                          accel: SurfaceAccel | None = None):
    """Euclidean closest point on the surface.

    Returns (point, BarycentricLocation, distance). Distance ties between
    triangles resolve to the lowest triangle index.
    """
    if accel is None:
        accel = SurfaceAccel.from_mesh(mesh)
    return accel.closest(point)


def closest_point_brute_force(point: np.ndarray, mesh: TriangleMesh):
    """All-triangle scan; the oracle for the accelerated query."""
    p = np.asarray(point, dtype=float).reshape(3)
    d2, tri, u, v, w = _kernels.closest_point_brute(
        mesh.vertices, mesh.triangles, p[0], p[1], p[2])
    mu = np.array([u, v, w])
    q = mu @ mesh.vertices[mesh.triangles[tri]]
    return q, BarycentricLocation(int(tri), mu), float(np.sqrt(d2))


def hausdorff_distance(mesh_a: TriangleMesh, mesh_b: TriangleMesh,
                       accel_a: SurfaceAccel | None = None,
                       accel_b: SurfaceAccel | None = None) -> float:
    """Symmetric Hausdorff distance, vertex-to-surface in both directions."""
    if accel_a is None:
        accel_a = SurfaceAccel.from_mesh(mesh_a)
    if accel_b is None:
        accel_b = SurfaceAccel.from_mesh(mesh_b)
    d_ab, _, _ = accel_b.closest_batch(mesh_a.vertices)
    d_ba, _, _ = accel_a.closest_batch(mesh_b.vertices)
    return float(max(d_ab.max(), d_ba.max()))


def boundary_vertices(mesh: TriangleMesh) -> np.ndarray:
    """Indices of vertices on open-boundary edges (edges used by one face)."""
    t = mesh.triangles
    edges = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
    edges = np.sort(edges, axis=1)
    uniq, counts = np.unique(edges, axis=0, return_counts=True)
    open_edges = uniq[counts == 1]
    return np.unique(open_edges)


# ---------------------------------------------------------------------------
# ASCII PLY I/O

def load_mesh(path) -> TriangleMesh:
    """Read an ASCII PLY with vertex and triangular face elements.

    Normals are taken from nx/ny/nz properties when present, otherwise
    computed. Non-triangle faces are rejected.
    """
    with open(path, "r", encoding="ascii") as fh:
        lines = [ln.strip() for ln in fh]
    if not lines or lines[0] != "ply":
        raise MeshError(f"{path}: not a PLY file")

    elements: list[tuple[str, int, list[str]]] = []
    i = 1
    fmt_seen = False
    while i < len(lines):
        ln = lines[i]
        i += 1
        if ln.startswith("comment") or ln == "":
            continue
        if ln.startswith("format"):
            if "ascii" not in ln:
                raise MeshError(f"{path}: only ASCII PLY is supported")
            fmt_seen = True
            continue
        if ln.startswith("element"):
            parts = ln.split()
            if len(parts) != 3:
                raise MeshError(f"{path}: malformed element line {ln!r}")
            elements.append((parts[1], int(parts[2]), []))
            continue
        if ln.startswith("property"):
            if not elements:
                raise MeshError(f"{path}: property before any element")
            parts = ln.split()
            elements[-1][2].append(parts[-1])
            continue
        if ln == "end_header":
            break
        raise MeshError(f"{path}: unexpected header line {ln!r}")
    else:
        raise MeshError(f"{path}: missing end_header")
    if not fmt_seen:
        raise MeshError(f"{path}: missing format line")

    body = [ln for ln in lines[i:] if ln != ""]
    cursor = 0
    vertices = normals = triangles = None
    for name, count, props in elements:
        rows = body[cursor:cursor + count]
        if len(rows) < count:
            raise MeshError(f"{path}: truncated element {name!r}")
        cursor += count
        if name == "vertex":
            try:
                data = np.array([[float(x) for x in r.split()] for r in rows])
            except ValueError as exc:
                raise MeshError(f"{path}: bad vertex row: {exc}") from exc
            if data.shape[1] != len(props):
                raise MeshError(f"{path}: vertex row width mismatch")
            cols = {p: k for k, p in enumerate(props)}
            for want in ("x", "y", "z"):
                if want not in cols:
                    raise MeshError(f"{path}: vertex element missing {want!r}")
            vertices = data[:, [cols["x"], cols["y"], cols["z"]]]
            if all(p in cols for p in ("nx", "ny", "nz")):
                normals = data[:, [cols["nx"], cols["ny"], cols["nz"]]]
        elif name == "face":
            tris = []
            for r in rows:
                parts = r.split()
                try:
                    n = int(parts[0])
                    idx = [int(x) for x in parts[1:1 + n]]
                except (ValueError, IndexError) as exc:
                    raise MeshError(f"{path}: bad face row {r!r}") from exc
                if n != 3:
                    raise MeshError(f"{path}: only triangular faces supported, got {n}-gon")
                tris.append(idx)
            triangles = np.array(tris, dtype=np.int64)
    if vertices is None or triangles is None:
        raise MeshError(f"{path}: PLY must contain vertex and face elements")
    try:
        return TriangleMesh(vertices, triangles, normals)
    except MeshError as exc:
        raise MeshError(f"{path}: {exc}") from exc


def save_mesh(mesh: TriangleMesh, path) -> None:
    """Write an ASCII PLY with positions, normals, and triangle faces."""
    with open(path, "w", encoding="ascii") as fh:
        fh.write("ply\nformat ascii 1.0\n")
        fh.write(f"element vertex {mesh.n_vertices}\n")
        for p in ("x", "y", "z", "nx", "ny", "nz"):
            fh.write(f"property float {p}\n")
        fh.write(f"element face {mesh.n_triangles}\n")
        fh.write("property list uchar int vertex_indices\n")
        fh.write("end_header\n")
        for p, n in zip(mesh.vertices, mesh.vertex_normals):
            fh.write(f"{p[0]!r} {p[1]!r} {p[2]!r} {n[0]!r} {n[1]!r} {n[2]!r}\n")
        for t in mesh.triangles:
            fh.write(f"3 {t[0]} {t[1]} {t[2]}\n")
