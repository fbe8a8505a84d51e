"""Chart-based and sphere-specific geometry oracles.

A chart manifold owns an invertible map ``push_forward`` from chart
coordinates to ambient space.  Its weighted average pulls all points
back to chart coordinates, averages there (component-wise, with
periodic directions handled by :func:`periodic_average`), and pushes
the result forward.  Its tangent query is the push-forward gradient
applied to the chart-coordinate difference.

The sphere oracles at the bottom of the module deliberately answer the
same queries in *different* ways (ambient averaging plus projection,
constant-speed geodesics, iterative spherical means); their mutual
discrepancies are exercised heavily by the test suite because curved
mesh refinement quality hinges on them.
"""

from __future__ import annotations

import itertools
import math
from abc import abstractmethod

import numpy as np

from .core import Manifold, check_weights
from .errors import (
    AntipodalPoints,
    DegenerateInput,
    HalfPeriodAmbiguity,
    OracleFailure,
    PullBackFailure,
    TooManyPoints,
)

_TWO_PI = 2.0 * math.pi


def periodic_average(values, weights, period: float) -> float:
    """Weighted average of scalars living on a circle of circumference ``period``.

    Values are shifted by whole periods so that every value lies within
    half a period of the first one, averaged, and the result is reported
    modulo ``period`` (in ``[0, period)``).

    Raises
    ------
    HalfPeriodAmbiguity
        if two values are exactly half a period apart (the shift is then
        ill posed), or if negative weights are combined with values that
        do not fit inside one half-period window.
    """
    if period <= 0.0:
        raise ValueError("period must be positive")
    v = np.asarray(values, dtype=float).ravel()
    w = np.asarray(weights, dtype=float).ravel()
    v = np.mod(v, period)

    # pairwise circular distances; exactly period/2 is ill posed
    diff = np.abs(v[:, None] - v[None, :])
    circ = np.minimum(diff % period, period - diff % period)
    if np.any(np.abs(circ - 0.5 * period) <= 1.0e-12):
        raise HalfPeriodAmbiguity(
            f"two values are half a period ({0.5 * period}) apart; "
            "the periodic average is not well defined"
        )

    # representative of each value nearest the first one
    delta = np.mod(v - v[0] + 0.5 * period, period) - 0.5 * period
    if np.any(w < 0.0):
        spread = float(np.max(delta) - np.min(delta))
        if spread > 0.5 * period:
            raise HalfPeriodAmbiguity(
                "negative weights require all values within one half-period "
                f"window; spread is {spread} for period {period}"
            )
    avg = v[0] + float(w @ delta)
    return float(np.mod(avg, period))


def _wrap_difference(u1: float, u2: float, period: float) -> float:
    """Smallest-magnitude representative of ``u2 - u1`` modulo ``period``."""
    d = math.remainder(u2 - u1, period)
    if abs(abs(d) - 0.5 * period) <= 1.0e-12:
        raise HalfPeriodAmbiguity("points are half a period apart")
    return d


class ChartManifold(Manifold):
    """Oracle defined by an invertible chart map.

    Parameters
    ----------
    chartdim : int
        Dimension of the chart coordinate space.
    periodicity : sequence of float, optional
        Period per chart direction; ``0`` marks a non-periodic direction.
    """

    def __init__(self, chartdim: int, periodicity=None):
        self.chartdim = int(chartdim)
        if periodicity is None:
            periodicity = np.zeros(self.chartdim)
        self.periodicity = np.asarray(periodicity, dtype=float)
        if self.periodicity.shape != (self.chartdim,):
            raise ValueError("periodicity must have one entry per chart dimension")

    @abstractmethod
    def pull_back(self, x) -> np.ndarray:
        """Map an ambient point to chart coordinates."""

    @abstractmethod
    def push_forward(self, u) -> np.ndarray:
        """Map chart coordinates to an ambient point."""

    def push_forward_gradient(self, u) -> np.ndarray:
        """Jacobian of ``push_forward``, shape (spacedim, chartdim).

        Default is a central finite difference; concrete charts override
        with the analytic gradient.
        """
        u = np.asarray(u, dtype=float)
        h = 1.0e-7
        cols = []
        for k in range(self.chartdim):
            e = np.zeros(self.chartdim)
            e[k] = h
            cols.append((self.push_forward(u + e) - self.push_forward(u - e)) / (2 * h))
        return np.column_stack(cols)

    def _new_point(self, pts, w):
        chart = np.array([self.pull_back(p) for p in pts])
        avg = np.empty(self.chartdim)
        for k in range(self.chartdim):
            period = self.periodicity[k]
            if period > 0.0:
                avg[k] = periodic_average(chart[:, k], w, period)
            else:
                avg[k] = float(w @ chart[:, k])
        return self.push_forward(avg)

    def tangent_vector(self, x1, x2):
        x1 = np.asarray(x1, dtype=float)
        x2 = np.asarray(x2, dtype=float)
        if np.linalg.norm(x2 - x1) <= 1.0e-14:
            raise DegenerateInput("tangent_vector requires two distinct points")
        u1 = self.pull_back(x1)
        u2 = self.pull_back(x2)
        du = np.empty(self.chartdim)
        for k in range(self.chartdim):
            period = self.periodicity[k]
            if period > 0.0:
                du[k] = _wrap_difference(u1[k], u2[k], period)
            else:
                du[k] = u2[k] - u1[k]
        return self.push_forward_gradient(u1) @ du


class IdentityChart(ChartManifold):
    """Chart whose map is the identity; behaves exactly like flat space."""

    def __init__(self, dim: int):
        super().__init__(dim)

    def pull_back(self, x):
        return np.asarray(x, dtype=float).copy()

    def push_forward(self, u):
        return np.asarray(u, dtype=float).copy()

    def push_forward_gradient(self, u):
        return np.eye(self.chartdim)


class PolarChart(ChartManifold):
    """2-d polar coordinates (r, theta) about ``center``; theta is 2*pi-periodic."""

    def __init__(self, center=(0.0, 0.0)):
        super().__init__(2, periodicity=(0.0, _TWO_PI))
        self.center = np.asarray(center, dtype=float)

    def pull_back(self, x):
        d = np.asarray(x, dtype=float) - self.center
        r = math.hypot(d[0], d[1])
        if r <= 1.0e-14:
            raise PullBackFailure("polar chart is undefined at the center")
        return np.array([r, math.atan2(d[1], d[0]) % _TWO_PI])

    def push_forward(self, u):
        r, th = float(u[0]), float(u[1])
        return self.center + r * np.array([math.cos(th), math.sin(th)])

    def push_forward_gradient(self, u):
        r, th = float(u[0]), float(u[1])
        c, s = math.cos(th), math.sin(th)
        return np.array([[c, -r * s], [s, r * c]])


class SphericalShellChart(ChartManifold):
    """3-d spherical coordinates (r, theta, phi) about ``center``.

    ``theta`` is the polar angle measured from +z, ``phi`` the azimuth
    (2*pi-periodic).  Points on the polar axis are rejected because the
    azimuth is undefined there.
    """

    def __init__(self, center=(0.0, 0.0, 0.0)):
        super().__init__(3, periodicity=(0.0, 0.0, _TWO_PI))
        self.center = np.asarray(center, dtype=float)

    def pull_back(self, x):
        d = np.asarray(x, dtype=float) - self.center
        r = float(np.linalg.norm(d))
        if r <= 1.0e-14:
            raise PullBackFailure("spherical chart is undefined at the center")
        rho = math.hypot(d[0], d[1])
        if rho <= 1.0e-12 * r:
            raise PullBackFailure("spherical chart is undefined on the polar axis")
        return np.array([r, math.acos(max(-1.0, min(1.0, d[2] / r))),
                         math.atan2(d[1], d[0]) % _TWO_PI])

    def push_forward(self, u):
        r, th, ph = float(u[0]), float(u[1]), float(u[2])
        st, ct = math.sin(th), math.cos(th)
        return self.center + r * np.array([st * math.cos(ph), st * math.sin(ph), ct])

    def push_forward_gradient(self, u):
        r, th, ph = float(u[0]), float(u[1]), float(u[2])
        st, ct = math.sin(th), math.cos(th)
        cp, sp = math.cos(ph), math.sin(ph)
        return np.array([
            [st * cp, r * ct * cp, -r * st * sp],
            [st * sp, r * ct * sp, r * st * cp],
            [ct, -r * st, 0.0],
        ])


class CylindricalChart(ChartManifold):
    """3-d cylindrical coordinates (r, phi, z) about a z-aligned axis."""

    def __init__(self, center=(0.0, 0.0, 0.0)):
        super().__init__(3, periodicity=(0.0, _TWO_PI, 0.0))
        self.center = np.asarray(center, dtype=float)

    def pull_back(self, x):
        d = np.asarray(x, dtype=float) - self.center
        r = math.hypot(d[0], d[1])
        if r <= 1.0e-14:
            raise PullBackFailure("cylindrical chart is undefined on the axis")
        return np.array([r, math.atan2(d[1], d[0]) % _TWO_PI, d[2]])

    def push_forward(self, u):
        r, ph, z = float(u[0]), float(u[1]), float(u[2])
        return self.center + np.array([r * math.cos(ph), r * math.sin(ph), z])

    def push_forward_gradient(self, u):
        r, ph = float(u[0]), float(u[1])
        c, s = math.cos(ph), math.sin(ph)
        return np.array([[c, -r * s, 0.0], [s, r * c, 0.0], [0.0, 0.0, 1.0]])


class GradedSquareChart(ChartManifold):
    """Grading chart (u, v) -> (u^2, v^2) on the unit square.

    Averaging through this chart drags new mesh vertices toward the
    origin corner.
    """

    def __init__(self):
        super().__init__(2)

    def pull_back(self, x):
        x = np.asarray(x, dtype=float)
        if np.any(x < -1.0e-12) or np.any(x > 1.0 + 1.0e-12):
            raise PullBackFailure(f"point {x} outside the unit square")
        return np.sqrt(np.clip(x, 0.0, 1.0))

    def push_forward(self, u):
        u = np.asarray(u, dtype=float)
        return u * u

    def push_forward_gradient(self, u):
        u = np.asarray(u, dtype=float)
        return np.diag(2.0 * u)


class GradedSineChart(ChartManifold):
    """Grading chart (u, v) -> (sin(pi(u-1/2))/2 + 1/2, ...) on the unit square.

    Averaging through this chart compresses cells toward all four sides
    of the square.
    """

    def __init__(self):
        super().__init__(2)

    def pull_back(self, x):
        x = np.asarray(x, dtype=float)
        if np.any(x < -1.0e-12) or np.any(x > 1.0 + 1.0e-12):
            raise PullBackFailure(f"point {x} outside the unit square")
        return 0.5 + np.arcsin(np.clip(2.0 * x - 1.0, -1.0, 1.0)) / math.pi

    def push_forward(self, u):
        u = np.asarray(u, dtype=float)
        return 0.5 * np.sin(math.pi * (u - 0.5)) + 0.5

    def push_forward_gradient(self, u):
        u = np.asarray(u, dtype=float)
        return np.diag(0.5 * math.pi * np.cos(math.pi * (u - 0.5)))


# ---------------------------------------------------------------------------
# sphere oracles


def _directions(pts: np.ndarray, center: np.ndarray):
    d = pts - center
    rho = np.linalg.norm(d, axis=-1)
    if np.any(rho <= 1.0e-14):
        raise OracleFailure("input point coincides with the sphere center")
    return d / rho[..., None], rho


def _slerp_dir(d1: np.ndarray, d2: np.ndarray, t: float) -> np.ndarray:
    """Constant-speed great-circle interpolation between unit vectors."""
    c = float(np.dot(d1, d2))
    if c <= -1.0 + 1.0e-12:
        raise AntipodalPoints("geodesic between antipodal points is not unique")
    u = d2 - c * d1
    s = float(np.linalg.norm(u))
    if s <= 1.0e-14:
        return d1.copy()
    omega = math.atan2(s, c)
    return math.cos(t * omega) * d1 + math.sin(t * omega) * (u / s)


class SphereProjectionManifold(Manifold):
    """Sphere oracle that averages in ambient space and projects radially.

    The averaged point is pushed back onto the sphere whose radius is
    the weighted average of the input radii.  Cheap and adequate for
    many uses, but *not* consistent with geodesic interpolation: nested
    half-way averages do not reproduce a direct quarter-weight average
    (the discrepancy is cubic in the subtended angle).
    """

    def __init__(self, center):
        self.center = np.asarray(center, dtype=float)

    def _new_point(self, pts, w):
        d, rho = _directions(pts, self.center)
        v = w @ (pts - self.center)
        nv = float(np.linalg.norm(v))
        if nv <= 1.0e-14:
            raise OracleFailure("averaged point coincides with the sphere center")
        return self.center + float(w @ rho) * (v / nv)

    def tangent_vector(self, x1, x2):
        x1 = np.asarray(x1, dtype=float)
        x2 = np.asarray(x2, dtype=float)
        if np.linalg.norm(x2 - x1) <= 1.0e-14:
            raise DegenerateInput("tangent_vector requires two distinct points")
        d, rho = _directions(np.array([x1, x2]), self.center)
        chord = x2 - x1
        radial = chord - d[0] * float(d[0] @ chord)
        return (rho[1] - rho[0]) * d[0] + radial


class SphericalAverageManifold(Manifold):
    """Sphere oracle based on geodesics and spherical (Riemannian) means.

    Two-point queries interpolate along the great circle at constant
    speed; queries with three or more points return the weighted
    spherical average of the directions (fixed-point iteration of the
    intrinsic mean).  Radii are always combined affinely, so radial
    lines stay straight.
    """

    def __init__(self, center):
        self.center = np.asarray(center, dtype=float)

    def _new_point(self, pts, w):
        keep = w != 0.0
        if not np.all(keep):
            pts, w = pts[keep], w[keep]
        d, rho = _directions(pts, self.center)
        r = float(w @ rho)
        if len(pts) == 1:
            return self.center + r * d[0]
        if len(pts) == 2:
            dir_ = _slerp_dir(d[0], d[1], float(w[1]))
        else:
            dir_ = self._spherical_mean(d, w)
        return self.center + r * dir_

    @staticmethod
    def _spherical_mean(d: np.ndarray, w: np.ndarray, tol: float = 5.0e-15):
        """Weighted intrinsic mean of unit vectors via log/exp iteration."""
        v = w @ d
        nv = float(np.linalg.norm(v))
        if nv <= 1.0e-10:
            raise OracleFailure("spherical average is undefined (directions cancel)")
        y = v / nv
        for _ in range(50):
            c = np.clip(d @ y, -1.0, 1.0)
            if np.any(c <= -1.0 + 1.0e-12):
                raise AntipodalPoints("spherical average with an antipodal point")
            u = d - c[:, None] * y
            nu = np.linalg.norm(u, axis=1)
            theta = np.arccos(c)
            scale = np.where(nu > 1.0e-14, theta / np.maximum(nu, 1.0e-300), 0.0)
            e = w @ (scale[:, None] * u)
            ne = float(np.linalg.norm(e))
            if ne < tol:
                break
            y = math.cos(ne) * y + math.sin(ne) * (e / ne)
        return y

    def new_point_batch(self, pts, w):
        """Vectorized batch of same-size queries (m, n, 3) / (m, n)."""
        pts = np.asarray(pts, dtype=float)
        w = np.asarray(w, dtype=float)
        s = np.sum(w, axis=1)
        if np.any(np.abs(s - 1.0) > 1.0e-12):
            from .errors import WeightSumViolation

            raise WeightSumViolation("batch contains invalid weight sums")
        d = pts - self.center
        rho = np.linalg.norm(d, axis=2)
        if np.any(rho <= 1.0e-14):
            raise OracleFailure("input point coincides with the sphere center")
        d = d / rho[:, :, None]
        r = np.sum(w * rho, axis=1)
        n = pts.shape[1]
        if n == 2:
            dirs = self._slerp_dir_batch(d, w[:, 1])
        else:
            dirs = self._spherical_mean_batch(d, w)
        return self.center + r[:, None] * dirs

    @staticmethod
    def _slerp_dir_batch(d: np.ndarray, t: np.ndarray) -> np.ndarray:
        c = np.clip(np.einsum("md,md->m", d[:, 0], d[:, 1]), -1.0, 1.0)
        if np.any(c <= -1.0 + 1.0e-12):
            raise AntipodalPoints("geodesic between antipodal points is not unique")
        u = d[:, 1] - c[:, None] * d[:, 0]
        s = np.sqrt(np.einsum("md,md->m", u, u))
        omega = np.arctan2(s, c)
        coef = np.where(s > 1.0e-14, np.sin(t * omega) / np.maximum(s, 1.0e-300), 0.0)
        return np.cos(t * omega)[:, None] * d[:, 0] + coef[:, None] * u

    @staticmethod
    def _spherical_mean_batch(d: np.ndarray, w: np.ndarray, tol: float = 5.0e-15):
        v = np.einsum("mn,mnd->md", w, d)
        nv = np.linalg.norm(v, axis=1)
        if np.any(nv <= 1.0e-10):
            raise OracleFailure("spherical average is undefined (directions cancel)")
        y = v / nv[:, None]
        # Rows converge at different speeds; freeze each one as soon as its
        # update drops below tol so large batches do not pay for stragglers.
        act = np.arange(d.shape[0])
        da, wa = d, w
        for _ in range(50):
            ya = y[act]
            c = np.clip(np.einsum("mnd,md->mn", da, ya), -1.0, 1.0)
            if np.any(c <= -1.0 + 1.0e-12):
                raise AntipodalPoints("spherical average with an antipodal point")
            u = da - c[:, :, None] * ya[:, None, :]
            nu = np.sqrt(np.einsum("mnd,mnd->mn", u, u))
            theta = np.arccos(c)
            scale = np.where(nu > 1.0e-14, theta / np.maximum(nu, 1.0e-300), 0.0)
            e = np.einsum("mn,mnd->md", wa * scale, u)
            ne = np.sqrt(np.einsum("md,md->m", e, e))
            live = ne >= tol
            if not np.any(live):
                break
            ya, e, ne = ya[live], e[live], ne[live]
            ynew = np.cos(ne)[:, None] * ya + (np.sin(ne) / ne)[:, None] * e
            ynew /= np.sqrt(np.einsum("md,md->m", ynew, ynew))[:, None]
            act = act[live]
            y[act] = ynew
            da, wa = d[act], w[act]
        return y

    def tangent_vector(self, x1, x2):
        x1 = np.asarray(x1, dtype=float)
        x2 = np.asarray(x2, dtype=float)
        if np.linalg.norm(x2 - x1) <= 1.0e-14:
            raise DegenerateInput("tangent_vector requires two distinct points")
        d, rho = _directions(np.array([x1, x2]), self.center)
        c = float(np.dot(d[0], d[1]))
        if c <= -1.0 + 1.0e-12:
            raise AntipodalPoints("tangent between antipodal points is not unique")
        u = d[1] - c * d[0]
        s = float(np.linalg.norm(u))
        t = (rho[1] - rho[0]) * d[0]
        if s > 1.0e-14:
            omega = math.atan2(s, c)
            t = t + rho[0] * omega * (u / s)
        return t


class SphereGeodesicManifold(Manifold):
    """Sphere oracle built from pairwise geodesic reduction.

    ``mode='recursive'`` folds the weighted point list left to right:
    the running point absorbs the next one at the geodesic parameter
    given by the weight ratio.  The result depends on the input order
    once the points do not lie on a single great circle (the spread is
    quartic in the angular diameter of the point set).

    ``mode='permuted'`` symmetrizes by averaging the recursive result
    over all N! input orders and re-projecting onto the sphere; it is
    insensitive to input order but costs 8! = 40320 reductions already
    at N = 8, which is why larger point counts are rejected.
    """

    MAX_PERMUTED_POINTS = 8

    def __init__(self, center, mode: str = "recursive"):
        if mode not in ("recursive", "permuted"):
            raise ValueError(f"unknown mode {mode!r}")
        self.center = np.asarray(center, dtype=float)
        self.mode = mode

    def _new_point(self, pts, w):
        if self.mode == "recursive":
            return self.new_point_recursive(pts, w)
        return self.new_point_permuted(pts, w)

    def _reduce(self, d: np.ndarray, rho: np.ndarray, w: np.ndarray):
        dir_acc = d[0]
        rho_acc = rho[0]
        w_acc = float(w[0])
        for i in range(1, len(rho)):
            wi = float(w[i])
            if wi == 0.0:
                continue
            total = w_acc + wi
            if abs(total) <= 1.0e-14:
                raise OracleFailure("running weight vanishes during reduction")
            t = wi / total
            dir_acc = _slerp_dir(dir_acc, d[i], t)
            rho_acc = (w_acc * rho_acc + wi * rho[i]) / total
            w_acc = total
        return dir_acc, rho_acc

    def new_point_recursive(self, points, weights) -> np.ndarray:
        pts, w = check_weights(points, weights)
        d, rho = _directions(pts, self.center)
        dir_, r = self._reduce(d, rho, w)
        return self.center + r * dir_

    def new_point_permuted(self, points, weights) -> np.ndarray:
        pts, w = check_weights(points, weights)
        n = len(pts)
        if n > self.MAX_PERMUTED_POINTS:
            raise TooManyPoints(
                f"permuted averaging supports at most {self.MAX_PERMUTED_POINTS} "
                f"points, got {n}"
            )
        d, rho = _directions(pts, self.center)
        acc = np.zeros(pts.shape[1])
        racc = 0.0
        count = 0
        for perm in itertools.permutations(range(n)):
            idx = list(perm)
            dir_, r = self._reduce(d[idx], rho[idx], w[idx])
            acc += dir_
            racc += r
            count += 1
        nacc = float(np.linalg.norm(acc))
        if nacc <= 1.0e-14:
            raise OracleFailure("permuted average is undefined (directions cancel)")
        return self.center + (racc / count) * (acc / nacc)
