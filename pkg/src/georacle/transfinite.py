"""Transfinite interpolation: extending boundary geometry into cells.

A :class:`TransfiniteCell` owns the corner vertices of one coarse cell
plus the geometry oracles of its curved edges (and faces, in 3D).  It
blends the boundary descriptions into the interior with the classical
Boolean-sum construction — faces added, edges subtracted, vertices
added back — which reproduces every boundary entity exactly and reduces
to multilinear interpolation when everything is straight.

The cell also acts as a geometry oracle itself: averaging happens in
the cell's reference coordinates (Newton pull-back) and the result is
pushed through the interpolation, so refinement of any descendant cell
respects the coarse boundary geometry.
"""

from __future__ import annotations

import threading

import numpy as np

from .core import FlatManifold, Manifold
from .errors import NewtonDivergence, OutsideCell
from .refcell import (
    EDGE_AXIS,
    EDGES,
    FACE_AXES_3D,
    FACE_EDGES_3D,
    FACES_3D,
    VERTEX_COORDS,
    vertex_weights,
)

#: pull-back accuracy relative to the cell diameter
NEWTON_TOL = 1.0e-10

NEWTON_MAX_ITER = 30

#: converged reference coordinates may overhang the unit cell by this much
REFERENCE_SLACK = 0.1

_FLAT = FlatManifold()


class TransfiniteCell(Manifold):
    """Coarse cell with transfinite interior interpolation.

    Parameters
    ----------
    vertices : (4, d) or (8, 3) array
        Corner vertices in lexicographic order (bit k of the vertex
        number is its reference coordinate along axis k).
    edge_manifolds : mapping edge -> Manifold, optional
        Geometry oracle per curved edge; straight edges may be omitted.
    face_manifolds : mapping face -> Manifold, optional (3D only)
        Geometry oracle per curved face; faces without one are built by
        transfinite interpolation of their own four edges.
    """

    def __init__(self, vertices, edge_manifolds=None, face_manifolds=None):
        v = np.asarray(vertices, dtype=float)
        if v.shape not in ((4, 2), (4, 3), (8, 3)):
            raise ValueError(
                f"vertices must be (4, 2|3) for a quad or (8, 3) for a hex, "
                f"got {v.shape}"
            )
        self.vertices = v
        self.dim = 2 if len(v) == 4 else 3
        self.spacedim = v.shape[1]
        if self.dim != self.spacedim:
            raise ValueError("transfinite cells require dim == spacedim")
        self.edge_manifolds = dict(edge_manifolds or {})
        self.face_manifolds = dict(face_manifolds or {})
        if self.dim == 2 and self.face_manifolds:
            raise ValueError("face manifolds only apply to hexahedral cells")
        self.diameter = float(
            max(np.linalg.norm(a - b) for a in v for b in v)
        )
        self._cache: dict[bytes, np.ndarray] = {}
        self._cache_lock = threading.Lock()
        self._check_edge_interpolation()

    def _check_edge_interpolation(self):
        """Edge curves must pass through their endpoint vertices."""
        tol = 1.0e-10 * max(self.diameter, 1.0)
        for e, m in self.edge_manifolds.items():
            a = self.vertices[EDGES[self.dim][e][0]]
            b = self.vertices[EDGES[self.dim][e][1]]
            if (np.linalg.norm(m.new_point((a, b), (1.0, 0.0)) - a) > tol
                    or np.linalg.norm(m.new_point((a, b), (0.0, 1.0)) - b) > tol):
                raise ValueError(
                    f"edge {e} manifold does not interpolate its endpoints"
                )

    # -- boundary entities -------------------------------------------------

    def edge_point(self, e: int, t: float) -> np.ndarray:
        """Point at parameter ``t`` on edge ``e`` (its manifold's curve)."""
        a, b = (self.vertices[i] for i in EDGES[self.dim][e])
        m = self.edge_manifolds.get(e, _FLAT)
        return m.new_point((a, b), (1.0 - t, t))

    def face_point(self, f: int, u: float, v: float) -> np.ndarray:
        """Point at parameters ``(u, v)`` on face ``f`` of a hex cell."""
        corners = self.vertices[list(FACES_3D[f])]
        m = self.face_manifolds.get(f)
        if m is not None:
            w = np.array([(1 - u) * (1 - v), u * (1 - v), (1 - u) * v, u * v])
            return m.new_point(corners, w)
        eb, et, el, er = FACE_EDGES_3D[f]
        return (
            (1 - v) * self.edge_point(eb, u) + v * self.edge_point(et, u)
            + (1 - u) * self.edge_point(el, v) + u * self.edge_point(er, v)
            - ((1 - u) * (1 - v) * corners[0] + u * (1 - v) * corners[1]
               + (1 - u) * v * corners[2] + u * v * corners[3])
        )

    # -- evaluation --------------------------------------------------------

    def evaluate(self, xhat) -> np.ndarray:
        """Transfinite interpolation at reference coordinates ``xhat``."""
        xhat = np.asarray(xhat, dtype=float)
        if xhat.shape != (self.dim,):
            raise ValueError(f"expected {self.dim} reference coordinates")
        if self.dim == 2:
            return self._evaluate_2d(xhat)
        return self._evaluate_3d(xhat)

    def _evaluate_2d(self, xhat):
        s, u = float(xhat[0]), float(xhat[1])
        x = (
            (1 - u) * self.edge_point(0, s) + u * self.edge_point(1, s)
            + (1 - s) * self.edge_point(2, u) + s * self.edge_point(3, u)
        )
        return x - vertex_weights(xhat) @ self.vertices

    def _evaluate_3d(self, xhat):
        x = np.zeros(3)
        # faces, added
        for f in range(6):
            axis = f // 2
            blend = xhat[axis] if f % 2 else 1.0 - xhat[axis]
            if blend == 0.0:
                continue
            ua, va = FACE_AXES_3D[f]
            x += blend * self.face_point(f, xhat[ua], xhat[va])
        # edges, subtracted
        for e, (va, vb) in enumerate(EDGES[3]):
            axis = EDGE_AXIS[3][e]
            blend = 1.0
            for k in range(3):
                if k == axis:
                    continue
                side = (va >> k) & 1
                blend *= xhat[k] if side else 1.0 - xhat[k]
            if blend == 0.0:
                continue
            x -= blend * self.edge_point(e, xhat[axis])
        # vertices, added back
        return x + vertex_weights(xhat) @ self.vertices

    # -- inversion ---------------------------------------------------------

    def _bilinear_guess(self, x: np.ndarray) -> np.ndarray:
        """Invert the multilinear vertex map as a Newton starting point."""
        xhat = np.full(self.dim, 0.5)
        for _ in range(10):
            r = vertex_weights(xhat) @ self.vertices - x
            if float(np.linalg.norm(r)) <= 1.0e-12 * max(self.diameter, 1.0):
                break
            j = self._multilinear_jacobian(xhat)
            try:
                step = np.linalg.solve(j, r)
            except np.linalg.LinAlgError:
                break
            xhat = np.clip(xhat - step, -1.0, 2.0)
        return xhat

    def _multilinear_jacobian(self, xhat):
        j = np.empty((self.spacedim, self.dim))
        for k in range(self.dim):
            dw = np.zeros(2**self.dim)
            for v in range(2**self.dim):
                p = 1.0 if (v >> k) & 1 else -1.0
                for a in range(self.dim):
                    if a == k:
                        continue
                    p *= xhat[a] if (v >> a) & 1 else 1.0 - xhat[a]
                dw[v] = p
            j[:, k] = dw @ self.vertices
        return j

    def _fd_jacobian(self, xhat, h: float = 1.0e-6):
        j = np.empty((self.spacedim, self.dim))
        for k in range(self.dim):
            e = np.zeros(self.dim)
            e[k] = h
            j[:, k] = (self.evaluate(xhat + e) - self.evaluate(xhat - e)) / (2 * h)
        return j

    def pull_back(self, x, use_cache: bool = True) -> np.ndarray:
        """Reference coordinates of an ambient point (Newton inversion)."""
        x = np.asarray(x, dtype=float)
        key = x.tobytes() if use_cache else None
        if key is not None:
            with self._cache_lock:
                hit = self._cache.get(key)
            if hit is not None:
                return hit.copy()

        tol = NEWTON_TOL * max(self.diameter, 1.0e-300)
        xhat = self._bilinear_guess(x)
        converged = False
        for _ in range(NEWTON_MAX_ITER):
            r = self.evaluate(xhat) - x
            if float(np.linalg.norm(r)) <= tol:
                converged = True
                break
            try:
                step = np.linalg.solve(self._fd_jacobian(xhat), r)
            except np.linalg.LinAlgError as exc:
                raise NewtonDivergence(
                    f"singular transfinite Jacobian at {xhat}"
                ) from exc
            xhat = xhat - step
            # genuine blow-up guard; points that merely land outside the
            # cell must still converge so they can be reported OutsideCell
            if np.any(np.abs(xhat - 0.5) > 1.0e3):
                raise NewtonDivergence(f"pull-back of {x} is running away")
        if not converged:
            raise NewtonDivergence(
                f"pull-back of {x} did not reach {tol} in {NEWTON_MAX_ITER} iterations"
            )
        if np.any(xhat < -REFERENCE_SLACK) or np.any(xhat > 1.0 + REFERENCE_SLACK):
            raise OutsideCell(
                f"point {x} pulls back to {xhat}, outside the unit cell "
                f"(slack {REFERENCE_SLACK})"
            )
        if key is not None:
            with self._cache_lock:
                self._cache[key] = xhat.copy()
        return xhat

    # -- oracle interface --------------------------------------------------

    def _new_point(self, pts, w):
        ref = np.array([self.pull_back(p) for p in pts])
        return self.evaluate(w @ ref)


def transfinite_eval(tc: TransfiniteCell, xhat) -> np.ndarray:
    """Module-level convenience wrapper for :meth:`TransfiniteCell.evaluate`."""
    return tc.evaluate(xhat)


def transfinite_pull_back(tc: TransfiniteCell, x) -> np.ndarray:
    """Module-level convenience wrapper for :meth:`TransfiniteCell.pull_back`."""
    return tc.pull_back(x)


def transfinite_new_point(tc: TransfiniteCell, points, weights) -> np.ndarray:
    """Weighted average through the transfinite chart."""
    return tc.new_point(points, weights)
