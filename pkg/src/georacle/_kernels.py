"""Numba kernels for triangle-surface queries.

Both the exhaustive-scan and the BVH code paths live here and share the
same per-triangle primitives, so the two routes produce bit-identical
distances for any given triangle.  Ties between triangles at exactly the
same distance (or line parameter) are broken toward the smaller triangle
index in both routes.

Triangle data arrives as a packed ``(nt, 3, 3)`` corner array; the BVH
variants additionally receive the same data permuted into leaf order so
leaf scans touch memory sequentially.
"""

import numpy as np
from numba import njit

#: barycentric slack so rays grazing a shared edge still register a hit
RAY_BARY_EPS = 1.0e-12

_STACK = 256  # traversal stack, ample for balanced trees of millions of tris


@njit(cache=True, fastmath=False)
def _closest_on_tri(px, py, pz, ax, ay, az, bx, by, bz, cx, cy, cz):
    """Closest point to p on triangle abc (Voronoi-region walk)."""
    abx, aby, abz = bx - ax, by - ay, bz - az
    acx, acy, acz = cx - ax, cy - ay, cz - az
    apx, apy, apz = px - ax, py - ay, pz - az

    d1 = abx * apx + aby * apy + abz * apz
    d2 = acx * apx + acy * apy + acz * apz
    if d1 <= 0.0 and d2 <= 0.0:
        return ax, ay, az

    bpx, bpy, bpz = px - bx, py - by, pz - bz
    d3 = abx * bpx + aby * bpy + abz * bpz
    d4 = acx * bpx + acy * bpy + acz * bpz
    if d3 >= 0.0 and d4 <= d3:
        return bx, by, bz

    vc = d1 * d4 - d3 * d2
    if vc <= 0.0 and d1 >= 0.0 and d3 <= 0.0:
        v = d1 / (d1 - d3)
        return ax + v * abx, ay + v * aby, az + v * abz

    cpx, cpy, cpz = px - cx, py - cy, pz - cz
    d5 = abx * cpx + aby * cpy + abz * cpz
    d6 = acx * cpx + acy * cpy + acz * cpz
    if d6 >= 0.0 and d5 <= d6:
        return cx, cy, cz

    vb = d5 * d2 - d1 * d6
    if vb <= 0.0 and d2 >= 0.0 and d6 <= 0.0:
        w = d2 / (d2 - d6)
        return ax + w * acx, ay + w * acy, az + w * acz

    va = d3 * d6 - d5 * d4
    if va <= 0.0 and (d4 - d3) >= 0.0 and (d5 - d6) >= 0.0:
        w = (d4 - d3) / ((d4 - d3) + (d5 - d6))
        return bx + w * (cx - bx), by + w * (cy - by), bz + w * (cz - bz)

    denom = 1.0 / (va + vb + vc)
    v = vb * denom
    w = vc * denom
    return (ax + abx * v + acx * w,
            ay + aby * v + acy * w,
            az + abz * v + acz * w)


@njit(cache=True, fastmath=False)
def _tri_dist2(px, py, pz, tv, k):
    qx, qy, qz = _closest_on_tri(
        px, py, pz,
        tv[k, 0, 0], tv[k, 0, 1], tv[k, 0, 2],
        tv[k, 1, 0], tv[k, 1, 1], tv[k, 1, 2],
        tv[k, 2, 0], tv[k, 2, 1], tv[k, 2, 2])
    dx, dy, dz = px - qx, py - qy, pz - qz
    return dx * dx + dy * dy + dz * dz, qx, qy, qz


@njit(cache=True, fastmath=False)
def brute_closest(queries, tv, out_pts, out_idx, out_d2):
    for q in range(queries.shape[0]):
        px, py, pz = queries[q, 0], queries[q, 1], queries[q, 2]
        best = np.inf
        besti = -1
        bx = by = bz = 0.0
        for it in range(tv.shape[0]):
            d2, qx, qy, qz = _tri_dist2(px, py, pz, tv, it)
            if d2 < best:
                best = d2
                besti = it
                bx, by, bz = qx, qy, qz
        out_pts[q, 0], out_pts[q, 1], out_pts[q, 2] = bx, by, bz
        out_idx[q] = besti
        out_d2[q] = best


@njit(cache=True, fastmath=False)
def _box_dist2(px, py, pz, lo, hi, node):
    d = 0.0
    t = lo[node, 0] - px
    if t > 0.0:
        d += t * t
    t = px - hi[node, 0]
    if t > 0.0:
        d += t * t
    t = lo[node, 1] - py
    if t > 0.0:
        d += t * t
    t = py - hi[node, 1]
    if t > 0.0:
        d += t * t
    t = lo[node, 2] - pz
    if t > 0.0:
        d += t * t
    t = pz - hi[node, 2]
    if t > 0.0:
        d += t * t
    return d


@njit(cache=True, fastmath=False)
def bvh_closest(queries, tv_ord, order, lo, hi, left, right, start, count,
                out_pts, out_idx, out_d2):
    stack = np.empty(_STACK, dtype=np.int64)
    for q in range(queries.shape[0]):
        px, py, pz = queries[q, 0], queries[q, 1], queries[q, 2]
        best = np.inf
        besti = -1
        bx = by = bz = 0.0
        top = 0
        stack[top] = 0
        top += 1
        while top > 0:
            top -= 1
            node = stack[top]
            # keep equal-distance nodes: a smaller-index triangle may hide there
            if _box_dist2(px, py, pz, lo, hi, node) > best:
                continue
            if count[node] > 0:  # leaf
                for k in range(start[node], start[node] + count[node]):
                    d2, qx, qy, qz = _tri_dist2(px, py, pz, tv_ord, k)
                    it = order[k]
                    if d2 < best or (d2 == best and it < besti):
                        best = d2
                        besti = it
                        bx, by, bz = qx, qy, qz
            else:
                l = left[node]
                r = right[node]
                dl = _box_dist2(px, py, pz, lo, hi, l)
                dr = _box_dist2(px, py, pz, lo, hi, r)
                if dl <= dr:  # visit nearer child first
                    if dr <= best:
                        stack[top] = r
                        top += 1
                    if dl <= best:
                        stack[top] = l
                        top += 1
                else:
                    if dl <= best:
                        stack[top] = l
                        top += 1
                    if dr <= best:
                        stack[top] = r
                        top += 1
        out_pts[q, 0], out_pts[q, 1], out_pts[q, 2] = bx, by, bz
        out_idx[q] = besti
        out_d2[q] = best


@njit(cache=True, fastmath=False)
def _ray_tri(ox, oy, oz, dx, dy, dz, tv, k):
    """Line-triangle intersection parameter (signed t); NaN on miss."""
    ax, ay, az = tv[k, 0, 0], tv[k, 0, 1], tv[k, 0, 2]
    e1x, e1y, e1z = tv[k, 1, 0] - ax, tv[k, 1, 1] - ay, tv[k, 1, 2] - az
    e2x, e2y, e2z = tv[k, 2, 0] - ax, tv[k, 2, 1] - ay, tv[k, 2, 2] - az
    pvx = dy * e2z - dz * e2y
    pvy = dz * e2x - dx * e2z
    pvz = dx * e2y - dy * e2x
    det = e1x * pvx + e1y * pvy + e1z * pvz
    if det == 0.0:
        return np.nan
    inv = 1.0 / det
    tvecx, tvecy, tvecz = ox - ax, oy - ay, oz - az
    u = (tvecx * pvx + tvecy * pvy + tvecz * pvz) * inv
    if u < -RAY_BARY_EPS or u > 1.0 + RAY_BARY_EPS:
        return np.nan
    qvx = tvecy * e1z - tvecz * e1y
    qvy = tvecz * e1x - tvecx * e1z
    qvz = tvecx * e1y - tvecy * e1x
    v = (dx * qvx + dy * qvy + dz * qvz) * inv
    if v < -RAY_BARY_EPS or u + v > 1.0 + RAY_BARY_EPS:
        return np.nan
    return (e2x * qvx + e2y * qvy + e2z * qvz) * inv


@njit(cache=True, fastmath=False)
def brute_ray(origins, dirs, tv, out_t, out_idx):
    for q in range(origins.shape[0]):
        ox, oy, oz = origins[q, 0], origins[q, 1], origins[q, 2]
        dx, dy, dz = dirs[q, 0], dirs[q, 1], dirs[q, 2]
        best = np.inf
        besti = -1
        bt = np.nan
        for it in range(tv.shape[0]):
            t = _ray_tri(ox, oy, oz, dx, dy, dz, tv, it)
            if not np.isnan(t):
                at = abs(t)
                if at < best or (at == best and it < besti):
                    best = at
                    besti = it
                    bt = t
        out_t[q] = bt
        out_idx[q] = besti


@njit(cache=True, fastmath=False)
def _box_line_tmin(ox, oy, oz, dx, dy, dz, lo, hi, node):
    """Smallest |t| of the line inside the box; inf if the line misses it."""
    tlo = -np.inf
    thi = np.inf
    for ax in range(3):
        if ax == 0:
            o = ox
            d = dx
        elif ax == 1:
            o = oy
            d = dy
        else:
            o = oz
            d = dz
        mn = lo[node, ax]
        mx = hi[node, ax]
        if d == 0.0:
            if o < mn or o > mx:
                return np.inf
        else:
            t0 = (mn - o) / d
            t1 = (mx - o) / d
            if t0 > t1:
                t0, t1 = t1, t0
            if t0 > tlo:
                tlo = t0
            if t1 < thi:
                thi = t1
            if tlo > thi:
                return np.inf
    if tlo <= 0.0 <= thi:
        return 0.0
    if tlo > 0.0:
        return tlo
    return -thi


@njit(cache=True, fastmath=False)
def bvh_ray(origins, dirs, tv_ord, order, lo, hi, left, right, start, count,
            out_t, out_idx):
    stack = np.empty(_STACK, dtype=np.int64)
    for q in range(origins.shape[0]):
        ox, oy, oz = origins[q, 0], origins[q, 1], origins[q, 2]
        dx, dy, dz = dirs[q, 0], dirs[q, 1], dirs[q, 2]
        best = np.inf
        besti = -1
        bt = np.nan
        top = 0
        stack[top] = 0
        top += 1
        while top > 0:
            top -= 1
            node = stack[top]
            bd = _box_line_tmin(ox, oy, oz, dx, dy, dz, lo, hi, node)
            if bd == np.inf or bd > best:
                continue
            if count[node] > 0:
                for k in range(start[node], start[node] + count[node]):
                    t = _ray_tri(ox, oy, oz, dx, dy, dz, tv_ord, k)
                    if not np.isnan(t):
                        at = abs(t)
                        it = order[k]
                        if at < best or (at == best and it < besti):
                            best = at
                            besti = it
                            bt = t
            else:
                l = left[node]
                r = right[node]
                tl = _box_line_tmin(ox, oy, oz, dx, dy, dz, lo, hi, l)
                tr = _box_line_tmin(ox, oy, oz, dx, dy, dz, lo, hi, r)
                if tl <= tr:
                    if tr != np.inf and tr <= best:
                        stack[top] = r
                        top += 1
                    if tl != np.inf and tl <= best:
                        stack[top] = l
                        top += 1
                else:
                    if tl != np.inf and tl <= best:
                        stack[top] = l
                        top += 1
                    if tr != np.inf and tr <= best:
                        stack[top] = r
                        top += 1
        out_t[q] = bt
        out_idx[q] = besti
