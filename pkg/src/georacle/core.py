"""Core geometry-oracle interface.

A *manifold* answers exactly two kinds of queries:

* ``new_point(points, weights)`` -- a manifold-aware weighted average of
  existing points (weights sum to one; negative weights are allowed),
* ``tangent_vector(x1, x2)`` -- the direction in which ``x1`` would move
  toward ``x2`` along the manifold, defined as the derivative of
  ``new_point((x1, x2), (1-w, w))`` with respect to ``w`` at ``w = 0``.

Everything else in this package (refinement, curved cell mappings,
transfinite interpolation, surface projection) is built on these two
primitives.  Oracle objects are immutable after construction and safe to
share between threads.
"""

from __future__ import annotations

from abc import ABC, abstractmethod

import numpy as np

from .errors import DegenerateInput, WeightSumViolation

#: tolerance on |sum(weights) - 1| before a query is rejected
WEIGHT_SUM_TOL = 1.0e-12

#: default step for finite-difference tangent vectors
TANGENT_EPS = 1.0e-8


def as_point(x) -> np.ndarray:
    """Validate and return a point as a 1-d float array.

    Finiteness is checked here, at construction time, so the per-query
    code paths do not have to.
    """
    p = np.asarray(x, dtype=float)
    if p.ndim != 1 or p.size == 0:
        raise ValueError(f"a point must be a 1-d coordinate array, got shape {p.shape}")
    if not np.all(np.isfinite(p)):
        raise ValueError(f"point contains non-finite coordinates: {p}")
    return p


def check_weights(points, weights) -> tuple[np.ndarray, np.ndarray]:
    """Validate a weighted point set and return it as (n, d) / (n,) arrays."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    w = np.asarray(weights, dtype=float).ravel()
    if len(pts) != len(w):
        raise ValueError(f"{len(pts)} points but {len(w)} weights")
    if len(pts) < 1:
        raise ValueError("need at least one point")
    s = float(np.sum(w))
    if abs(s - 1.0) > WEIGHT_SUM_TOL:
        raise WeightSumViolation(f"weights sum to {s!r}, expected 1 within {WEIGHT_SUM_TOL}")
    return pts, w


class Manifold(ABC):
    """Abstract geometry oracle.

    Subclasses implement :meth:`_new_point`; the public entry point
    validates the weighted point set first.  ``tangent_vector`` defaults
    to a one-sided finite difference of ``new_point`` (step
    ``TANGENT_EPS``) which works for any oracle; subclasses with an
    analytic tangent override it.
    """

    def new_point(self, points, weights) -> np.ndarray:
        pts, w = check_weights(points, weights)
        return self._new_point(pts, w)

    @abstractmethod
    def _new_point(self, pts: np.ndarray, w: np.ndarray) -> np.ndarray:
        ...

    def new_point_batch(self, pts: np.ndarray, w: np.ndarray) -> np.ndarray:
        """Answer many same-size queries; pts (m, n, d), w (m, n).

        The default implementation just loops; oracles that can vectorize
        override this.  Weights are validated once per batch.
        """
        pts = np.asarray(pts, dtype=float)
        w = np.asarray(w, dtype=float)
        s = np.sum(w, axis=1)
        if np.any(np.abs(s - 1.0) > WEIGHT_SUM_TOL):
            bad = float(s[np.argmax(np.abs(s - 1.0))])
            raise WeightSumViolation(f"batch contains weight sum {bad!r}")
        return np.array([self._new_point(p, wi) for p, wi in zip(pts, w)])

    def tangent_vector(self, x1, x2) -> np.ndarray:
        """Non-normalized direction from ``x1`` toward ``x2`` along the manifold."""
        x1 = np.asarray(x1, dtype=float)
        x2 = np.asarray(x2, dtype=float)
        if np.linalg.norm(x2 - x1) <= 1.0e-14:
            raise DegenerateInput("tangent_vector requires two distinct points")
        return self.tangent_vector_fd(x1, x2, TANGENT_EPS)

    def tangent_vector_fd(self, x1, x2, eps: float) -> np.ndarray:
        """Finite-difference fallback for the tangent query.

        Moves an ``eps`` fraction of the way toward ``x2`` via ``new_point``
        and divides the displacement by ``eps``; first-order accurate in
        ``eps``.
        """
        if not 0.0 < eps < 0.5:
            raise ValueError(f"eps must lie in (0, 1/2), got {eps}")
        x1 = np.asarray(x1, dtype=float)
        x2 = np.asarray(x2, dtype=float)
        xe = self.new_point((x1, x2), (1.0 - eps, eps))
        return (xe - x1) / eps


class FlatManifold(Manifold):
    """Euclidean geometry: averages are plain affine combinations."""

    def _new_point(self, pts, w):
        return w @ pts

    def new_point_batch(self, pts, w):
        pts = np.asarray(pts, dtype=float)
        w = np.asarray(w, dtype=float)
        s = np.sum(w, axis=1)
        if np.any(np.abs(s - 1.0) > WEIGHT_SUM_TOL):
            raise WeightSumViolation("batch contains invalid weight sums")
        return np.einsum("mn,mnd->md", w, pts)

    def tangent_vector(self, x1, x2):
        x1 = np.asarray(x1, dtype=float)
        x2 = np.asarray(x2, dtype=float)
        if np.linalg.norm(x2 - x1) <= 1.0e-14:
            raise DegenerateInput("tangent_vector requires two distinct points")
        return x2 - x1


def new_point(manifold: Manifold, points, weights) -> np.ndarray:
    """Module-level convenience wrapper for ``manifold.new_point``."""
    return manifold.new_point(points, weights)


def tangent_vector(manifold: Manifold, x1, x2) -> np.ndarray:
    """Module-level convenience wrapper for ``manifold.tangent_vector``."""
    return manifold.tangent_vector(x1, x2)
