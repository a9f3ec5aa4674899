import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ssmreg import (BarycentricLocation, MeshError, SurfaceAccel, TriangleMesh,
                    closest_point_brute_force, closest_point_on_mesh,
                    compute_vertex_normals, hausdorff_distance, load_mesh,
                    point_at, save_mesh)
from ssmreg.mesh import boundary_vertices

from .util import bumpy_mesh, grid_mesh, uv_sphere

SINGLE_TRIANGLE_PLY = """ply
format ascii 1.0
element vertex 3
property float x
property float y
property float z
element face 1
property list uchar int vertex_indices
end_header
0 0 0
1 0 0
0 1 0
3 0 1 2
"""


def write(tmp_path, text, name="mesh.ply"):
    path = tmp_path / name
    path.write_text(text)
    return path


class TestLoadMesh:
    def test_single_triangle(self, tmp_path):
        mesh = load_mesh(write(tmp_path, SINGLE_TRIANGLE_PLY))
        assert mesh.n_vertices == 3
        assert mesh.n_triangles == 1
        np.testing.assert_allclose(mesh.vertex_normals,
                                   np.tile([0.0, 0.0, 1.0], (3, 1)))

    def test_face_index_out_of_range(self, tmp_path):
        bad = SINGLE_TRIANGLE_PLY.replace("3 0 1 2", "3 0 1 7")
        with pytest.raises(MeshError, match="out of range"):
            load_mesh(write(tmp_path, bad))

    def test_quad_rejected(self, tmp_path):
        bad = SINGLE_TRIANGLE_PLY.replace("element vertex 3",
                                          "element vertex 4")
        bad = bad.replace("0 1 0\n3 0 1 2", "0 1 0\n1 1 0\n4 0 1 3 2")
        with pytest.raises(MeshError, match="triangular"):
            load_mesh(write(tmp_path, bad))

    def test_not_a_ply(self, tmp_path):
        with pytest.raises(MeshError, match="not a PLY"):
            load_mesh(write(tmp_path, "off\n"))

    def test_degenerate_triangle(self, tmp_path):
        bad = SINGLE_TRIANGLE_PLY.replace("0 1 0", "2 0 0")
        with pytest.raises(MeshError, match="degenerate"):
            load_mesh(write(tmp_path, bad))

    def test_cube_area_weighted_normals(self, tmp_path):
        # unit cube: at each corner three incident faces, two triangles per
        # face but the corner touches faces of unequal triangle area (1/2
        # each, two per face for the diagonal split). Hand-accumulate.
        verts = np.array([[x, y, z] for x in (0, 1) for y in (0, 1)
                          for z in (0, 1)], dtype=float)
        faces = np.array([
            [0, 1, 3], [0, 3, 2],   # x = 0
            [4, 6, 7], [4, 7, 5],   # x = 1
            [0, 4, 5], [0, 5, 1],   # y = 0
            [2, 3, 7], [2, 7, 6],   # y = 1
            [0, 2, 6], [0, 6, 4],   # z = 0
            [1, 5, 7], [1, 7, 3],   # z = 1
        ])
        mesh = TriangleMesh(verts, faces)
        lines = ["ply", "format ascii 1.0", "element vertex 8",
                 "property float x", "property float y", "property float z",
                 "element face 12", "property list uchar int vertex_indices",
                 "end_header"]
        lines += [" ".join(str(v) for v in row) for row in verts]
        lines += ["3 " + " ".join(str(i) for i in f) for f in faces]
        loaded = load_mesh(write(tmp_path, "\n".join(lines) + "\n"))

        # independent accumulation: sum of (unnormalized cross products)
        expected = np.zeros((8, 3))
        for tri in faces:
            a, b, c = verts[tri]
            cr = np.cross(b - a, c - a)
            for v in tri:
                expected[v] += cr
        expected /= np.linalg.norm(expected, axis=1)[:, None]
        np.testing.assert_allclose(loaded.vertex_normals, expected, atol=1e-12)
        np.testing.assert_allclose(mesh.vertex_normals, expected, atol=1e-12)

    def test_roundtrip_save_load(self, tmp_path):
        mesh = bumpy_mesh(seed=3)
        path = tmp_path / "out.ply"
        save_mesh(mesh, path)
        again = load_mesh(path)
        np.testing.assert_allclose(again.vertices, mesh.vertices)
        np.testing.assert_array_equal(again.triangles, mesh.triangles)
        np.testing.assert_allclose(again.vertex_normals, mesh.vertex_normals)


class TestVertexNormals:
    def test_flat_grid(self):
        mesh = grid_mesh(n=6)
        np.testing.assert_allclose(mesh.vertex_normals,
                                   np.tile([0.0, 0.0, 1.0], (36, 1)),
                                   atol=1e-15)

    def test_regular_tetrahedron(self):
        verts = np.array([[1, 1, 1], [1, -1, -1], [-1, 1, -1], [-1, -1, 1]],
                         dtype=float)
        faces = np.array([[0, 1, 2], [0, 3, 1], [0, 2, 3], [1, 3, 2]])
        mesh = TriangleMesh(verts, faces)
        # all faces congruent: vertex normal = normalized mean of the three
        # incident unit face normals
        fnorm = []
        for tri in faces:
            a, b, c = verts[tri]
            n = np.cross(b - a, c - a)
            fnorm.append(n / np.linalg.norm(n))
        fnorm = np.array(fnorm)
        for v in range(4):
            incident = fnorm[[v in tri for tri in faces]]
            expected = incident.mean(axis=0)
            expected /= np.linalg.norm(expected)
            np.testing.assert_allclose(mesh.vertex_normals[v], expected,
                                       atol=1e-12)

    def test_isolated_vertex(self):
        verts = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [5, 5, 5.0]])
        faces = np.array([[0, 1, 2]])
        with pytest.raises(MeshError, match="no usable normal"):
            compute_vertex_normals(verts, faces)


class TestPointAt:
    def test_vertex_case(self):
        mesh = bumpy_mesh(seed=1)
        loc = BarycentricLocation(4, np.array([1.0, 0.0, 0.0]))
        pt = point_at(mesh, loc)
        v = mesh.triangles[4][0]
        np.testing.assert_allclose(pt.position, mesh.vertices[v])
        np.testing.assert_allclose(pt.normal, mesh.vertex_normals[v])

    def test_centroid(self):
        mesh = TriangleMesh(np.array([[0, 0, 0], [3, 0, 0], [0, 3, 0.0]]),
                            np.array([[0, 1, 2]]))
        pt = point_at(mesh, BarycentricLocation(0, np.full(3, 1 / 3)))
        np.testing.assert_allclose(pt.position, [1.0, 1.0, 0.0])

    def test_matches_independent_weighted_sum(self):
        mesh = bumpy_mesh(seed=2)
        rng = np.random.default_rng(0)
        for _ in range(50):
            tri = int(rng.integers(mesh.n_triangles))
            mu = rng.random(3)
            mu /= mu.sum()
            pt = point_at(mesh, BarycentricLocation(tri, mu))
            idx = mesh.triangles[tri]
            expected = sum(m * mesh.vertices[i] for m, i in zip(mu, idx))
            np.testing.assert_allclose(pt.position, expected, atol=1e-12)

    @given(st.floats(0.01, 0.99), st.integers(0, 10**6))
    @settings(max_examples=30, deadline=None)
    def test_linearity_in_mu(self, alpha, seed):
        mesh = bumpy_mesh(seed=5)
        rng = np.random.default_rng(seed)
        tri = int(rng.integers(mesh.n_triangles))
        m1, m2 = rng.random((2, 3))
        m1 /= m1.sum()
        m2 /= m2.sum()
        blend = alpha * m1 + (1 - alpha) * m2
        p1 = point_at(mesh, BarycentricLocation(tri, m1)).position
        p2 = point_at(mesh, BarycentricLocation(tri, m2)).position
        pb = point_at(mesh, BarycentricLocation(tri, blend)).position
        np.testing.assert_allclose(pb, alpha * p1 + (1 - alpha) * p2,
                                    atol=1e-12)


class TestClosestPoint:
    def test_point_on_vertex(self):
        mesh = bumpy_mesh(seed=4)
        q, loc, dist = closest_point_on_mesh(mesh.vertices[10], mesh)
        assert dist == 0.0
        np.testing.assert_allclose(q, mesh.vertices[10])

    def test_corner_projection(self):
        mesh = TriangleMesh(np.array([[0, 0, 0], [2, 0, 0], [0, 2, 0.0]]),
                            np.array([[0, 1, 2]]))
        q, loc, dist = closest_point_on_mesh(np.array([0.0, 0.0, 1.0]), mesh)
        np.testing.assert_allclose(q, [0.0, 0.0, 0.0])
        assert dist == pytest.approx(1.0)

    def test_matches_brute_force(self):
        mesh = bumpy_mesh(seed=6)
        accel = SurfaceAccel.from_mesh(mesh)
        rng = np.random.default_rng(1)
        queries = rng.uniform(-2, 10, size=(300, 3))
        for p in queries:
            qa, la, da = accel.closest(p)
            qb, lb, db = closest_point_brute_force(p, mesh)
            assert la.triangle_index == lb.triangle_index
            assert da == db

    def test_distance_bounded_by_vertices(self):
        mesh = bumpy_mesh(seed=7)
        rng = np.random.default_rng(2)
        accel = SurfaceAccel.from_mesh(mesh)
        for p in rng.uniform(-3, 12, size=(100, 3)):
            _, _, dist = accel.closest(p)
            assert dist <= np.linalg.norm(mesh.vertices - p, axis=1).min() + 1e-12


class TestHausdorff:
    def test_identity(self):
        mesh = bumpy_mesh(seed=8)
        assert hausdorff_distance(mesh, mesh) == 0.0

    def test_translated_parallel_planes(self):
        # translating a yz-plane triangle along x: every vertex projects
        # onto the shifted copy's interior, so the distance is exactly 1
        verts = np.array([[0, 0, 0], [0, 4, 0], [0, 0, 4.0]])
        faces = np.array([[0, 1, 2]])
        a = TriangleMesh(verts, faces)
        b = TriangleMesh(verts + [1.0, 0, 0], faces)
        assert hausdorff_distance(a, b) == pytest.approx(1.0)

    def test_symmetry(self):
        a = bumpy_mesh(seed=9)
        b = bumpy_mesh(seed=10)
        assert hausdorff_distance(a, b) == pytest.approx(
            hausdorff_distance(b, a))

    def test_concentric_spheres(self):
        a = uv_sphere(radius=10.0, n_rings=25, n_seg=48)
        b = uv_sphere(radius=11.0, n_rings=25, n_seg=48)
        assert hausdorff_distance(a, b) == pytest.approx(1.0, abs=0.05)


def test_boundary_vertices_open_grid():
    mesh = grid_mesh(n=5)
    ring = boundary_vertices(mesh)
    # 4x4 interior grid: boundary = outer ring of 16 vertices
    assert len(ring) == 16
    closed = uv_sphere(n_rings=8, n_seg=12)
    assert boundary_vertices(closed).size == 0


def test_mesh_invariants():
    with pytest.raises(MeshError):
        TriangleMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=int))
    with pytest.raises(MeshError, match="out of range"):
        TriangleMesh(np.eye(3), np.array([[0, 1, 3]]))
