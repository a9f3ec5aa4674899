"""Numba kernels for triangle-mesh spatial queries.

Everything here works on flat float64/int64 arrays so the hot loops stay
inside compiled code. The public mesh API wraps these; the pure-numpy
brute-force oracles used in tests live next to the wrappers, not here.
"""

import numpy as np
from numba import njit

LEAF_SIZE = 8


@njit(cache=True, inline="always")
def _tri_closest_bary(ax, ay, az, bx, by, bz, cx, cy, cz, px, py, pz):
    """Barycentric weights (u, v, w) of the point on triangle abc closest to p.

    Region-based closest point on triangle (Ericson, Real-Time Collision
    Detection). Handles vertex, edge and interior cases exactly.
    """
    abx, aby, abz = bx - ax, by - ay, bz - az
    acx, acy, acz = cx - ax, cy - ay, cz - az
    apx, apy, apz = px - ax, py - ay, pz - az

    d1 = abx * apx + aby * apy + abz * apz
    d2 = acx * apx + acy * apy + acz * apz
    if d1 <= 0.0 and d2 <= 0.0:
        return 1.0, 0.0, 0.0

    bpx, bpy, bpz = px - bx, py - by, pz - bz
    d3 = abx * bpx + aby * bpy + abz * bpz
    d4 = acx * bpx + acy * bpy + acz * bpz
    if d3 >= 0.0 and d4 <= d3:
        return 0.0, 1.0, 0.0

    vc = d1 * d4 - d3 * d2
    if vc <= 0.0 and d1 >= 0.0 and d3 <= 0.0:
        t = d1 / (d1 - d3)
        return 1.0 - t, t, 0.0

    cpx, cpy, cpz = px - cx, py - cy, pz - cz
    d5 = abx * cpx + aby * cpy + abz * cpz
    d6 = acx * cpx + acy * cpy + acz * cpz
    if d6 >= 0.0 and d5 <= d6:
        return 0.0, 0.0, 1.0

    vb = d5 * d2 - d1 * d6
    if vb <= 0.0 and d2 >= 0.0 and d6 <= 0.0:
        t = d2 / (d2 - d6)
        return 1.0 - t, 0.0, t

    va = d3 * d6 - d5 * d4
    if va <= 0.0 and (d4 - d3) >= 0.0 and (d5 - d6) >= 0.0:
        t = (d4 - d3) / ((d4 - d3) + (d5 - d6))
        return 0.0, 1.0 - t, t

    denom = 1.0 / (va + vb + vc)
    v = vb * denom
    w = vc * denom
    return 1.0 - v - w, v, w


@njit(cache=True)
def build_bvh(verts, faces):
    """Median-split BVH over triangles.

    Returns (node_min, node_max, node_left, node_right, node_start,
    node_count, perm). Leaves have node_left == -1 and index the permuted
    triangle id range [start, start+count). Deterministic for fixed input.
    """
    m = faces.shape[0]
    cent = np.empty((m, 3))
    tmin = np.empty((m, 3))
    tmax = np.empty((m, 3))
    for i in range(m):
        i0, i1, i2 = faces[i, 0], faces[i, 1], faces[i, 2]
        for k in range(3):
            a = verts[i0, k]
            b = verts[i1, k]
            c = verts[i2, k]
            lo = min(a, min(b, c))
            hi = max(a, max(b, c))
            tmin[i, k] = lo
            tmax[i, k] = hi
            cent[i, k] = (a + b + c) / 3.0

    cap = 2 * m + 1
    node_min = np.empty((cap, 3))
    node_max = np.empty((cap, 3))
    node_left = np.full(cap, -1, dtype=np.int64)
    node_right = np.full(cap, -1, dtype=np.int64)
    node_start = np.zeros(cap, dtype=np.int64)
    node_count = np.zeros(cap, dtype=np.int64)
    perm = np.arange(m)

    # explicit stack of (node, lo, hi)
    stack = np.empty((cap, 3), dtype=np.int64)
    stack[0, 0] = 0
    stack[0, 1] = 0
    stack[0, 2] = m
    top = 1
    n_nodes = 1

    while top > 0:
        top -= 1
        node = stack[top, 0]
        lo = stack[top, 1]
        hi = stack[top, 2]

        for k in range(3):
            bmin = tmin[perm[lo], k]
            bmax = tmax[perm[lo], k]
            for j in range(lo + 1, hi):
                t = perm[j]
                if tmin[t, k] < bmin:
                    bmin = tmin[t, k]
                if tmax[t, k] > bmax:
                    bmax = tmax[t, k]
            node_min[node, k] = bmin
            node_max[node, k] = bmax

        if hi - lo <= LEAF_SIZE:
            node_left[node] = -1
            node_start[node] = lo
            node_count[node] = hi - lo
            continue

        # split along the widest centroid axis at the median
        axis = 0
        best_ext = -1.0
        for k in range(3):
            cmin = cent[perm[lo], k]
            cmax = cmin
            for j in range(lo + 1, hi):
                ck = cent[perm[j], k]
                if ck < cmin:
                    cmin = ck
                if ck > cmax:
                    cmax = ck
            if cmax - cmin > best_ext:
                best_ext = cmax - cmin
                axis = k

        n = hi - lo
        keys = np.empty(n)
        for j in range(n):
            keys[j] = cent[perm[lo + j], axis]
        order = np.argsort(keys)
        tmp = np.empty(n, dtype=np.int64)
        for j in range(n):
            tmp[j] = perm[lo + order[j]]
        for j in range(n):
            perm[lo + j] = tmp[j]

        mid = lo + n // 2
        left = n_nodes
        right = n_nodes + 1
        n_nodes += 2
        node_left[node] = left
        node_right[node] = right
        stack[top, 0] = left
        stack[top, 1] = lo
        stack[top, 2] = mid
        top += 1
        stack[top, 0] = right
        stack[top, 1] = mid
        stack[top, 2] = hi
        top += 1

    return (node_min[:n_nodes].copy(), node_max[:n_nodes].copy(),
            node_left[:n_nodes].copy(), node_right[:n_nodes].copy(),
            node_start[:n_nodes].copy(), node_count[:n_nodes].copy(), perm)


@njit(cache=True, inline="always")
def _box_dist_sq(bmin, bmax, node, px, py, pz):
    d = 0.0
    v = px
    if v < bmin[node, 0]:
        d += (bmin[node, 0] - v) ** 2
    elif v > bmax[node, 0]:
        d += (v - bmax[node, 0]) ** 2
    v = py
    if v < bmin[node, 1]:
        d += (bmin[node, 1] - v) ** 2
    elif v > bmax[node, 1]:
        d += (v - bmax[node, 1]) ** 2
    v = pz
    if v < bmin[node, 2]:
        d += (bmin[node, 2] - v) ** 2
    elif v > bmax[node, 2]:
        d += (v - bmax[node, 2]) ** 2
    return d


@njit(cache=True, inline="always")
def _tri_candidate(verts, faces, tri, px, py, pz):
    """Closest point on one triangle: (dist_sq, u, v, w)."""
    i0, i1, i2 = faces[tri, 0], faces[tri, 1], faces[tri, 2]
    u, v, w = _tri_closest_bary(
        verts[i0, 0], verts[i0, 1], verts[i0, 2],
        verts[i1, 0], verts[i1, 1], verts[i1, 2],
        verts[i2, 0], verts[i2, 1], verts[i2, 2],
        px, py, pz)
    qx = u * verts[i0, 0] + v * verts[i1, 0] + w * verts[i2, 0]
    qy = u * verts[i0, 1] + v * verts[i1, 1] + w * verts[i2, 1]
    qz = u * verts[i0, 2] + v * verts[i1, 2] + w * verts[i2, 2]
    d2 = (qx - px) ** 2 + (qy - py) ** 2 + (qz - pz) ** 2
    return d2, u, v, w


@njit(cache=True)
def closest_point_query(node_min, node_max, node_left, node_right,
                        node_start, node_count, perm, verts, faces,
                        px, py, pz):
    """Globally closest surface point: (dist_sq, tri, u, v, w).

    Ties on distance resolve to the lowest triangle index, matching the
    brute-force scan exactly.
    """
    best_d2 = np.inf
    best_tri = -1
    best_u = best_v = best_w = 0.0
    stack = np.empty(128, dtype=np.int64)
    stack[0] = 0
    top = 1
    while top > 0:
        top -= 1
        node = stack[top]
        if _box_dist_sq(node_min, node_max, node, px, py, pz) > best_d2:
            continue
        if node_left[node] == -1:
            s = node_start[node]
            for j in range(s, s + node_count[node]):
                tri = perm[j]
                d2, u, v, w = _tri_candidate(verts, faces, tri, px, py, pz)
                if d2 < best_d2 or (d2 == best_d2 and tri < best_tri):
                    best_d2 = d2
                    best_tri = tri
                    best_u, best_v, best_w = u, v, w
        else:
            l = node_left[node]
            r = node_right[node]
            dl = _box_dist_sq(node_min, node_max, l, px, py, pz)
            dr = _box_dist_sq(node_min, node_max, r, px, py, pz)
            # push the nearer child last so it pops first
            if dl <= dr:
                if dr <= best_d2:
                    stack[top] = r
                    top += 1
                if dl <= best_d2:
                    stack[top] = l
                    top += 1
            else:
                if dl <= best_d2:
                    stack[top] = l
                    top += 1
                if dr <= best_d2:
                    stack[top] = r
                    top += 1
    return best_d2, best_tri, best_u, best_v, best_w


@njit(cache=True)
def closest_point_batch(node_min, node_max, node_left, node_right,
                        node_start, node_count, perm, verts, faces, points):
    n = points.shape[0]
    d2 = np.empty(n)
    tri = np.empty(n, dtype=np.int64)
    bary = np.empty((n, 3))
    for i in range(n):
        d2[i], tri[i], bary[i, 0], bary[i, 1], bary[i, 2] = closest_point_query(
            node_min, node_max, node_left, node_right, node_start, node_count,
            perm, verts, faces, points[i, 0], points[i, 1], points[i, 2])
    return d2, tri, bary


@njit(cache=True)
def closest_point_brute(verts, faces, px, py, pz):
    """All-triangle scan with the same per-triangle rule as the BVH path."""
    best_d2 = np.inf
    best_tri = -1
    best_u = best_v = best_w = 0.0
    for tri in range(faces.shape[0]):
        d2, u, v, w = _tri_candidate(verts, faces, tri, px, py, pz)
        if d2 < best_d2 or (d2 == best_d2 and tri < best_tri):
            best_d2 = d2
            best_tri = tri
            best_u, best_v, best_w = u, v, w
    return best_d2, best_tri, best_u, best_v, best_w


@njit(cache=True, inline="always")
def _nll_candidate(verts_w, faces, vnormals, tri, px, py, pz, nx, ny, nz,
                   kappa):
    """Match NLL for one triangle in whitened coordinates.

    Position term is exact (whitened closest point == Mahalanobis-optimal
    point); the orientation term uses the interpolated surface normal at
    that point. Returns (nll, d2, u, v, w).
    """
    i0, i1, i2 = faces[tri, 0], faces[tri, 1], faces[tri, 2]
    u, v, w = _tri_closest_bary(
        verts_w[i0, 0], verts_w[i0, 1], verts_w[i0, 2],
        verts_w[i1, 0], verts_w[i1, 1], verts_w[i1, 2],
        verts_w[i2, 0], verts_w[i2, 1], verts_w[i2, 2],
        px, py, pz)
    qx = u * verts_w[i0, 0] + v * verts_w[i1, 0] + w * verts_w[i2, 0]
    qy = u * verts_w[i0, 1] + v * verts_w[i1, 1] + w * verts_w[i2, 1]
    qz = u * verts_w[i0, 2] + v * verts_w[i1, 2] + w * verts_w[i2, 2]
    d2 = (qx - px) ** 2 + (qy - py) ** 2 + (qz - pz) ** 2

    mx = u * vnormals[i0, 0] + v * vnormals[i1, 0] + w * vnormals[i2, 0]
    my = u * vnormals[i0, 1] + v * vnormals[i1, 1] + w * vnormals[i2, 1]
    mz = u * vnormals[i0, 2] + v * vnormals[i1, 2] + w * vnormals[i2, 2]
    nn = np.sqrt(mx * mx + my * my + mz * mz)
    if nn > 1e-30:
        cosang = (mx * nx + my * ny + mz * nz) / nn
    else:
        cosang = 0.0
    return 0.5 * d2 - kappa * cosang, d2, u, v, w


@njit(cache=True)
def most_likely_query(node_min, node_max, node_left, node_right,
                      node_start, node_count, perm, verts_w, faces, vnormals,
                      px, py, pz, nx, ny, nz, kappa):
    """Surface point minimizing 0.5*d_mahal^2 - kappa*cos(angle).

    Conservative pruning: a node cannot beat `best` unless
    0.5*boxdist^2 - kappa <= best. Ties resolve to the lowest triangle
    index, matching most_likely_brute.
    """
    best = np.inf
    best_tri = -1
    best_d2 = np.inf
    best_u = best_v = best_w = 0.0
    stack = np.empty(128, dtype=np.int64)
    stack[0] = 0
    top = 1
    while top > 0:
        top -= 1
        node = stack[top]
        if 0.5 * _box_dist_sq(node_min, node_max, node, px, py, pz) - kappa > best:
            continue
        if node_left[node] == -1:
            s = node_start[node]
            for j in range(s, s + node_count[node]):
                tri = perm[j]
                nll, d2, u, v, w = _nll_candidate(
                    verts_w, faces, vnormals, tri, px, py, pz, nx, ny, nz, kappa)
                if nll < best or (nll == best and tri < best_tri):
                    best = nll
                    best_tri = tri
                    best_d2 = d2
                    best_u, best_v, best_w = u, v, w
        else:
            l = node_left[node]
            r = node_right[node]
            bl = 0.5 * _box_dist_sq(node_min, node_max, l, px, py, pz) - kappa
            br = 0.5 * _box_dist_sq(node_min, node_max, r, px, py, pz) - kappa
            if bl <= br:
                if br <= best:
                    stack[top] = r
                    top += 1
                if bl <= best:
                    stack[top] = l
                    top += 1
            else:
                if bl <= best:
                    stack[top] = l
                    top += 1
                if br <= best:
                    stack[top] = r
                    top += 1
    return best, best_tri, best_d2, best_u, best_v, best_w


@njit(cache=True)
def most_likely_batch(node_min, node_max, node_left, node_right,
                      node_start, node_count, perm, verts_w, faces, vnormals,
                      points_w, normals_rot, kappa):
    n = points_w.shape[0]
    nll = np.empty(n)
    tri = np.empty(n, dtype=np.int64)
    d2 = np.empty(n)
    bary = np.empty((n, 3))
    for i in range(n):
        nll[i], tri[i], d2[i], bary[i, 0], bary[i, 1], bary[i, 2] = most_likely_query(
            node_min, node_max, node_left, node_right, node_start, node_count,
            perm, verts_w, faces, vnormals,
            points_w[i, 0], points_w[i, 1], points_w[i, 2],
            normals_rot[i, 0], normals_rot[i, 1], normals_rot[i, 2], kappa)
    return nll, tri, d2, bary


@njit(cache=True)
def most_likely_brute(verts_w, faces, vnormals, px, py, pz, nx, ny, nz, kappa):
    best = np.inf
    best_tri = -1
    best_d2 = np.inf
    best_u = best_v = best_w = 0.0
    for tri in range(faces.shape[0]):
        nll, d2, u, v, w = _nll_candidate(
            verts_w, faces, vnormals, tri, px, py, pz, nx, ny, nz, kappa)
        if nll < best or (nll == best and tri < best_tri):
            best = nll
            best_tri = tri
            best_d2 = d2
            best_u, best_v, best_w = u, v, w
    return best, best_tri, best_d2, best_u, best_v, best_w


@njit(cache=True, inline="always")
def _ray_box_hit(bmin, bmax, node, ox, oy, oz, ix, iy, iz, t_max):
    """Slab test: does the ray segment [0, t_max] touch the node box?"""
    t0 = 0.0
    t1 = t_max
    for k in range(3):
        if k == 0:
            o, inv = ox, ix
        elif k == 1:
            o, inv = oy, iy
        else:
            o, inv = oz, iz
        near = (bmin[node, k] - o) * inv
        far = (bmax[node, k] - o) * inv
        if near > far:
            near, far = far, near
        if near > t0:
            t0 = near
        if far < t1:
            t1 = far
        if t0 > t1:
            return False
    return True


@njit(cache=True)
def ray_blocked(node_min, node_max, node_left, node_right, node_start,
                node_count, perm, verts, faces, ox, oy, oz, dx, dy, dz,
                t_max, skip_tri):
    """Any-hit ray test (Moller-Trumbore) in t < t_max, ignoring skip_tri."""
    big = 1e300
    ix = 1.0 / dx if abs(dx) > 1e-300 else big
    iy = 1.0 / dy if abs(dy) > 1e-300 else big
    iz = 1.0 / dz if abs(dz) > 1e-300 else big
    t_hi = t_max * (1.0 - 1e-7)
    stack = np.empty(128, dtype=np.int64)
    stack[0] = 0
    top = 1
    while top > 0:
        top -= 1
        node = stack[top]
        if not _ray_box_hit(node_min, node_max, node, ox, oy, oz, ix, iy, iz, t_max):
            continue
        if node_left[node] == -1:
            s = node_start[node]
            for j in range(s, s + node_count[node]):
                tri = perm[j]
                if tri == skip_tri:
                    continue
                i0, i1, i2 = faces[tri, 0], faces[tri, 1], faces[tri, 2]
                e1x = verts[i1, 0] - verts[i0, 0]
                e1y = verts[i1, 1] - verts[i0, 1]
                e1z = verts[i1, 2] - verts[i0, 2]
                e2x = verts[i2, 0] - verts[i0, 0]
                e2y = verts[i2, 1] - verts[i0, 1]
                e2z = verts[i2, 2] - verts[i0, 2]
                hx = dy * e2z - dz * e2y
                hy = dz * e2x - dx * e2z
                hz = dx * e2y - dy * e2x
                det = e1x * hx + e1y * hy + e1z * hz
                if abs(det) < 1e-14:
                    continue
                inv_det = 1.0 / det
                sx = ox - verts[i0, 0]
                sy = oy - verts[i0, 1]
                sz = oz - verts[i0, 2]
                u = (sx * hx + sy * hy + sz * hz) * inv_det
                if u < -1e-12 or u > 1.0 + 1e-12:
                    continue
                qx = sy * e1z - sz * e1y
                qy = sz * e1x - sx * e1z
                qz = sx * e1y - sy * e1x
                v = (dx * qx + dy * qy + dz * qz) * inv_det
                if v < -1e-12 or u + v > 1.0 + 1e-12:
                    continue
                t = (e2x * qx + e2y * qy + e2z * qz) * inv_det
                if 1e-9 < t < t_hi:
                    return True
        else:
            stack[top] = node_left[node]
            top += 1
            stack[top] = node_right[node]
            top += 1
    return False


@njit(cache=True)
def rays_blocked_batch(node_min, node_max, node_left, node_right, node_start,
                       node_count, perm, verts, faces, origin, targets,
                       skip_tris):
    n = targets.shape[0]
    out = np.zeros(n, dtype=np.bool_)
    ox, oy, oz = origin[0], origin[1], origin[2]
    for i in range(n):
        dx = targets[i, 0] - ox
        dy = targets[i, 1] - oy
        dz = targets[i, 2] - oz
        out[i] = ray_blocked(node_min, node_max, node_left, node_right,
                             node_start, node_count, perm, verts, faces,
                             ox, oy, oz, dx, dy, dz, 1.0, skip_tris[i])
    return out
