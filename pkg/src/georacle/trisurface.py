"""Triangulated surfaces as projection targets.

A :class:`TriSurface` is an indexed triangle mesh (typically loaded from
an STL file) together with an axis-aligned bounding-box tree.  It
answers closest-point and line-intersection queries either through the
tree or through an exhaustive scan; the two routes are interchangeable
and the exhaustive one serves as the correctness oracle in the tests.

Projection strategies turn a surface into a geometry oracle: a weighted
average is formed in ambient space first and the result is then moved
onto the surface along a fixed direction, along the normal estimated
from the input points, or to the globally closest surface point.
"""

from __future__ import annotations

import struct
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .core import Manifold
from .errors import (
    DegenerateConfiguration,
    EmptySurface,
    ParseError,
    ProjectionMiss,
)

#: triangles with squared-area ratio below this (relative to the squared
#: bounding-box diagonal) are dropped at construction
DEGENERATE_AREA_REL = 1.0e-14

_BVH_LEAF_SIZE = 8


@dataclass
class _BVH:
    lo: np.ndarray
    hi: np.ndarray
    left: np.ndarray
    right: np.ndarray
    start: np.ndarray
    count: np.ndarray
    order: np.ndarray
    tv_ord: np.ndarray  # triangle corners permuted into leaf order


def _build_bvh(tv: np.ndarray) -> _BVH:
    """Median-split AABB tree over triangle bounding boxes."""
    tlo = tv.min(axis=1)
    thi = tv.max(axis=1)
    centroid = tv.mean(axis=1)

    lo, hi, left, right, start, count = [], [], [], [], [], []
    order = np.arange(len(tv), dtype=np.int64)

    def new_node():
        lo.append(None)
        hi.append(None)
        left.append(-1)
        right.append(-1)
        start.append(0)
        count.append(0)
        return len(lo) - 1

    # (node, begin, end) work list over slices of `order`
    stack = [(new_node(), 0, len(tv))]
    while stack:
        node, b, e = stack.pop()
        idx = order[b:e]
        lo[node] = tlo[idx].min(axis=0)
        hi[node] = thi[idx].max(axis=0)
        if e - b <= _BVH_LEAF_SIZE:
            start[node] = b
            count[node] = e - b
            continue
        axis = int(np.argmax(hi[node] - lo[node]))
        key = np.argsort(centroid[idx, axis], kind="stable")
        order[b:e] = idx[key]
        mid = b + (e - b) // 2
        l = new_node()
        r = new_node()
        left[node] = l
        right[node] = r
        stack.append((r, mid, e))
        stack.append((l, b, mid))

    return _BVH(
        lo=np.array(lo), hi=np.array(hi),
        left=np.array(left, dtype=np.int64), right=np.array(right, dtype=np.int64),
        start=np.array(start, dtype=np.int64), count=np.array(count, dtype=np.int64),
        order=order,
        tv_ord=np.ascontiguousarray(tv[order]),
    )


class TriSurface:
    """Immutable indexed triangle surface with spatial acceleration.

    Parameters
    ----------
    vertices : (nv, 3) float array
    triangles : (nt, 3) int array
        Vertex indices per triangle.  Degenerate triangles (area below
        ``DEGENERATE_AREA_REL`` times the squared bounding-box diagonal)
        are dropped with a warning.
    """

    def __init__(self, vertices, triangles):
        v = np.ascontiguousarray(vertices, dtype=float)
        t = np.ascontiguousarray(triangles, dtype=np.int64)
        if v.ndim != 2 or v.shape[1] != 3:
            raise ValueError("vertices must be an (nv, 3) array")
        if t.ndim != 2 or t.shape[1] != 3:
            raise ValueError("triangles must be an (nt, 3) array")
        if not np.all(np.isfinite(v)):
            raise ParseError("surface contains non-finite vertex coordinates")
        if len(t) and (t.min() < 0 or t.max() >= len(v)):
            raise ParseError("triangle references a vertex that does not exist")

        if len(t):
            diag2 = float(np.sum((v.max(axis=0) - v.min(axis=0)) ** 2)) if len(v) else 0.0
            cross = np.cross(v[t[:, 1]] - v[t[:, 0]], v[t[:, 2]] - v[t[:, 0]])
            area2 = 0.5 * np.linalg.norm(cross, axis=1)
            keep = area2 > DEGENERATE_AREA_REL * diag2
            self.n_degenerate_dropped = int(np.sum(~keep))
            if self.n_degenerate_dropped:
                warnings.warn(
                    f"dropped {self.n_degenerate_dropped} degenerate triangle(s)",
                    stacklevel=2,
                )
                t = t[keep]
                cross = cross[keep]
        else:
            self.n_degenerate_dropped = 0
            cross = np.zeros((0, 3))

        if len(t) == 0:
            raise EmptySurface("surface has no non-degenerate triangles")

        self.vertices = v
        self.triangles = t
        norms = np.linalg.norm(cross, axis=1)
        self.triangle_normals = cross / norms[:, None]
        self._tv = np.ascontiguousarray(v[t])  # packed corners, original order
        self._bvh = _build_bvh(self._tv)

    # -- closest point ----------------------------------------------------

    def closest_point_query(self, points, brute: bool = False):
        """Closest surface points for one or many query points.

        Returns ``(points_on_surface, triangle_indices, distances)``.
        Equidistant candidates resolve to the smallest triangle index.
        """
        q = np.ascontiguousarray(np.atleast_2d(points), dtype=float)
        single = np.asarray(points).ndim == 1
        m = len(q)
        out_p = np.empty((m, 3))
        out_i = np.empty(m, dtype=np.int64)
        out_d2 = np.empty(m)
        if brute:
            _kernels.brute_closest(q, self._tv, out_p, out_i, out_d2)
        else:
            b = self._bvh
            _kernels.bvh_closest(q, b.tv_ord, b.order,
                                 b.lo, b.hi, b.left, b.right, b.start, b.count,
                                 out_p, out_i, out_d2)
        d = np.sqrt(out_d2)
        if single:
            return out_p[0], int(out_i[0]), float(d[0])
        return out_p, out_i, d

    def closest_point(self, x) -> np.ndarray:
        p, _, _ = self.closest_point_query(x)
        return p

    # -- line intersection ------------------------------------------------

    def ray_intersect_query(self, origins, directions, brute: bool = False):
        """Line-surface intersections with smallest ``|t|`` (both directions).

        Returns ``(t, triangle_indices)``; ``t`` is NaN and the index -1
        where the line misses the surface.  Hits grazing a triangle edge
        count for every adjacent triangle (small barycentric slack); the
        smallest triangle index wins ties.
        """
        o = np.ascontiguousarray(np.atleast_2d(origins), dtype=float)
        d = np.ascontiguousarray(np.atleast_2d(directions), dtype=float)
        single = np.asarray(origins).ndim == 1
        m = len(o)
        out_t = np.empty(m)
        out_i = np.empty(m, dtype=np.int64)
        if brute:
            _kernels.brute_ray(o, d, self._tv, out_t, out_i)
        else:
            b = self._bvh
            _kernels.bvh_ray(o, d, b.tv_ord, b.order,
                             b.lo, b.hi, b.left, b.right, b.start, b.count,
                             out_t, out_i)
        if single:
            return float(out_t[0]), int(out_i[0])
        return out_t, out_i

    def ray_intersect(self, origin, direction):
        """Intersection point of the line through ``origin``, or None."""
        t, idx = self.ray_intersect_query(origin, direction)
        if idx < 0:
            return None
        return np.asarray(origin, dtype=float) + t * np.asarray(direction, dtype=float)


# ---------------------------------------------------------------------------
# STL reading and writing


def _parse_ascii_stl(text: str):
    tris = []
    cur = []
    for ln, line in enumerate(text.splitlines(), start=1):
        parts = line.split()
        if not parts:
            continue
        if parts[0] == "vertex":
            if len(parts) != 4:
                raise ParseError(f"line {ln}: malformed vertex line")
            try:
                cur.append([float(parts[1]), float(parts[2]), float(parts[3])])
            except ValueError as exc:
                raise ParseError(f"line {ln}: bad vertex coordinate") from exc
        elif parts[0] == "endfacet":
            if len(cur) != 3:
                raise ParseError(f"line {ln}: facet with {len(cur)} vertices")
            tris.append(cur)
            cur = []
    if cur:
        raise ParseError("facet without endfacet at end of file")
    return np.array(tris, dtype=float).reshape(-1, 3, 3)


def _parse_binary_stl(data: bytes):
    if len(data) < 84:
        raise ParseError("binary STL shorter than its 84-byte header")
    (count,) = struct.unpack_from("<I", data, 80)
    expected = 84 + 50 * count
    if len(data) < expected:
        raise ParseError(
            f"binary STL truncated: header promises {count} facets "
            f"({expected} bytes), file has {len(data)}"
        )
    rec = np.frombuffer(data, dtype=np.dtype("(4,3)<f4, <u2"), count=count, offset=84)
    # widen float32 exactly; facet normal (row 0) is recomputed, not trusted
    return rec["f0"][:, 1:, :].astype(float)


def _weld(facets: np.ndarray):
    """Turn a facet soup (nt, 3, 3) into indexed vertices and triangles.

    Vertices are merged on exact coordinate equality; well-formed STL
    files repeat shared corners bit-identically.
    """
    flat = facets.reshape(-1, 3)
    seen: dict[bytes, int] = {}
    index = np.empty(len(flat), dtype=np.int64)
    verts = []
    for i, p in enumerate(flat):
        key = p.tobytes()
        j = seen.get(key)
        if j is None:
            j = len(verts)
            seen[key] = j
            verts.append(p)
        index[i] = j
    return np.array(verts), index.reshape(-1, 3)


def load_stl(path) -> TriSurface:
    """Read an ASCII or binary STL file into a :class:`TriSurface`."""
    with open(path, "rb") as f:
        data = f.read()
    is_ascii = False
    if data[:5] == b"solid":
        # binary files may also open with "solid"; require facet syntax
        try:
            head = data[:2048].decode("ascii")
        except UnicodeDecodeError:
            head = ""
        if "facet" in head or "endsolid" in head:
            is_ascii = True
    if is_ascii:
        facets = _parse_ascii_stl(data.decode("ascii", errors="strict"))
    else:
        facets = _parse_binary_stl(data)
    if len(facets) == 0:
        raise EmptySurface(f"{path}: STL file contains no facets")
    verts, tris = _weld(facets)
    return TriSurface(verts, tris)


def save_stl_ascii(path, surface: TriSurface, name: str = "surface"):
    with open(path, "w") as f:
        f.write(f"solid {name}\n")
        for tri, n in zip(surface.triangles, surface.triangle_normals):
            f.write(f"  facet normal {n[0]:.9e} {n[1]:.9e} {n[2]:.9e}\n")
            f.write("    outer loop\n")
            for vi in tri:
                v = surface.vertices[vi]
                f.write(f"      vertex {v[0]:.9e} {v[1]:.9e} {v[2]:.9e}\n")
            f.write("    endloop\n")
            f.write("  endfacet\n")
        f.write(f"endsolid {name}\n")


def save_stl_binary(path, surface: TriSurface, header: bytes = b""):
    header = (header + b"\0" * 80)[:80]
    if header[:5] == b"solid":
        raise ValueError("binary STL header must not begin with 'solid'")
    with open(path, "wb") as f:
        f.write(header)
        f.write(struct.pack("<I", len(surface.triangles)))
        for tri, n in zip(surface.triangles, surface.triangle_normals):
            rec = [n] + [surface.vertices[vi] for vi in tri]
            f.write(np.array(rec, dtype="<f4").tobytes())
            f.write(struct.pack("<H", 0))


# ---------------------------------------------------------------------------
# projection strategies


@dataclass(frozen=True)
class DirectionalProjection:
    """Project along a fixed direction (both senses of the line)."""

    direction: tuple

    def project(self, surface: TriSurface, point: np.ndarray, pts: np.ndarray):
        hit = surface.ray_intersect(point, np.asarray(self.direction, dtype=float))
        if hit is None:
            raise ProjectionMiss(
                f"line through {point} along {self.direction} misses the surface"
            )
        return hit


@dataclass(frozen=True)
class ClosestPointProjection:
    """Move to the globally closest surface point."""

    def project(self, surface: TriSurface, point: np.ndarray, pts: np.ndarray):
        return surface.closest_point(point)


@dataclass(frozen=True)
class NormalToMeshProjection:
    """Project along the normal estimated from the input point set.

    If the line along the estimated normal misses the surface, the
    closest surface point is used instead.
    """

    def project(self, surface: TriSurface, point: np.ndarray, pts: np.ndarray):
        n = normal_of_point_set(pts, surface)
        hit = surface.ray_intersect(point, n)
        if hit is None:
            return surface.closest_point(point)
        return hit


def normal_of_point_set(points, surface: TriSurface) -> np.ndarray:
    """Unit normal associated with a set of points near a surface.

    Three or more points define a least-squares plane whose normal is
    returned (sign unspecified).  For exactly two points the surface
    normals of the triangles nearest each endpoint are averaged and the
    component along the connecting segment is removed, which pins down
    the unique direction perpendicular to the segment.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    n = len(pts)
    if n >= 3:
        centered = pts - pts.mean(axis=0)
        _, sing, vt = np.linalg.svd(centered, full_matrices=True)
        if sing[1] <= 1.0e-10 * (sing[0] + 1.0e-300):
            raise DegenerateConfiguration(
                "points are collinear; no unique plane normal"
            )
        return vt[2]
    if n == 2:
        axis = pts[1] - pts[0]
        na = np.linalg.norm(axis)
        if na <= 1.0e-14:
            raise DegenerateConfiguration("coincident points define no normal")
        axis = axis / na
        _, idx, _ = surface.closest_point_query(pts)
        avg = surface.triangle_normals[idx].mean(axis=0)
        avg = avg - axis * float(axis @ avg)
        nn = np.linalg.norm(avg)
        if nn <= 1.0e-12:
            raise DegenerateConfiguration(
                "averaged endpoint normals are parallel to the segment"
            )
        return avg / nn
    raise DegenerateConfiguration("need at least two points to estimate a normal")


def projected_new_point(surface: TriSurface, strategy, points, weights) -> np.ndarray:
    """Weighted average in ambient space followed by projection."""
    from .core import check_weights

    pts, w = check_weights(points, weights)
    return strategy.project(surface, w @ pts, pts)


class SurfaceProjectionManifold(Manifold):
    """Geometry oracle backed by a triangulated surface and a strategy.

    The tangent query uses the generic finite-difference fallback, which
    is the natural choice when the surface is only known through
    projections.
    """

    def __init__(self, surface: TriSurface, strategy):
        self.surface = surface
        self.strategy = strategy

    def _new_point(self, pts, w):
        return self.strategy.project(self.surface, w @ pts, pts)
