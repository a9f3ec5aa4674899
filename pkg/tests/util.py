"""Shared geometry builders for the test suite."""

import numpy as np

from ssmreg import TriangleMesh


def uv_sphere(radius=10.0, n_rings=20, n_seg=30, center=(0.0, 0.0, 0.0),
              inward=False) -> TriangleMesh:
    """Latitude/longitude sphere triangulation."""
    center = np.asarray(center, dtype=float)
    verts = []
    for i in range(1, n_rings):
        th = np.pi * i / n_rings
        for j in range(n_seg):
            ph = 2 * np.pi * j / n_seg
            verts.append([radius * np.sin(th) * np.cos(ph),
                          radius * np.sin(th) * np.sin(ph),
                          radius * np.cos(th)])
    top = len(verts)
    verts.append([0.0, 0.0, radius])
    bottom = len(verts)
    verts.append([0.0, 0.0, -radius])

    def vid(i, j):
        return (i - 1) * n_seg + (j % n_seg)

    faces = []
    for i in range(1, n_rings - 1):
        for j in range(n_seg):
            a, b = vid(i, j), vid(i, j + 1)
            c, d = vid(i + 1, j), vid(i + 1, j + 1)
            faces.append([a, c, b])
            faces.append([b, c, d])
    for j in range(n_seg):
        faces.append([top, vid(1, j), vid(1, j + 1)])
        faces.append([bottom, vid(n_rings - 1, j + 1), vid(n_rings - 1, j)])
    faces = np.array(faces, dtype=np.int64)
    if inward:
        faces = faces[:, [0, 2, 1]]
    return TriangleMesh(np.asarray(verts) + center, faces)


def grid_mesh(n=5, spacing=1.0, z=0.0) -> TriangleMesh:
    """Flat triangulated grid in the z-plane with upward winding."""
    xs, ys = np.meshgrid(np.arange(n), np.arange(n))
    verts = np.stack([xs.ravel() * spacing, ys.ravel() * spacing,
                      np.full(n * n, z)], axis=1)
    faces = []
    for i in range(n - 1):
        for j in range(n - 1):
            a = i * n + j
            b = a + 1
            c = a + n
            d = c + 1
            faces.append([a, b, c])
            faces.append([b, d, c])
    return TriangleMesh(verts, np.array(faces, dtype=np.int64))


def bumpy_mesh(seed=0, n=9, bump=0.6) -> TriangleMesh:
    """Grid mesh with seeded smooth height variation, for generic queries."""
    rng = np.random.default_rng(seed)
    base = grid_mesh(n=n, spacing=1.0)
    verts = base.vertices.copy()
    verts[:, 2] = bump * np.sin(verts[:, 0] * rng.uniform(0.5, 1.5)) \
        * np.cos(verts[:, 1] * rng.uniform(0.5, 1.5))
    return TriangleMesh(verts, base.triangles)


def random_unit(rng, size=None):
    v = rng.standard_normal(3 if size is None else (size, 3))
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


def random_rotation(rng):
    from ssmreg.transform import rotation_from_axis_angle
    return rotation_from_axis_angle(rng.uniform(0, np.pi) * random_unit(rng))
