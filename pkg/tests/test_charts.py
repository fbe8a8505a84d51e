"""Tests for chart-based oracles, periodic averaging, and sphere geometry."""

from __future__ import annotations

import itertools
import math

import numpy as np
import pytest

from georacle.charts import (
    CylindricalChart,
    GradedSineChart,
    GradedSquareChart,
    IdentityChart,
    PolarChart,
    SphereGeodesicManifold,
    SphereProjectionManifold,
    SphericalAverageManifold,
    SphericalShellChart,
    periodic_average,
)
from georacle.errors import (
    AntipodalPoints,
    HalfPeriodAmbiguity,
    OracleFailure,
    PullBackFailure,
    TooManyPoints,
)

TWO_PI = 2.0 * math.pi


# ---------------------------------------------------------------------------
# periodic averaging


def test_periodic_average_without_wrap_is_plain_average():
    assert periodic_average([0.1, 0.3], [0.5, 0.5], 1.0) == pytest.approx(0.2, abs=1e-15)


def test_periodic_average_across_the_seam_is_exact():
    # the midpoint of 2*pi - eps and eps is the seam itself, reported as 0.0
    eps = 1.0e-9
    out = periodic_average([TWO_PI - eps, eps], [0.5, 0.5], TWO_PI)
    assert out == 0.0


def test_periodic_average_weighted_seam_crossing():
    out = periodic_average([TWO_PI - 0.1, 0.1], [0.25, 0.75], TWO_PI)
    assert out == pytest.approx(0.05, abs=1e-14)


def test_periodic_average_half_period_is_rejected():
    with pytest.raises(HalfPeriodAmbiguity):
        periodic_average([0.0, math.pi], [0.5, 0.5], TWO_PI)
    with pytest.raises(HalfPeriodAmbiguity):
        periodic_average([0.25, 0.75], [0.5, 0.5], 1.0)


def test_periodic_average_negative_weights_inside_window():
    # extrapolation past the second value, staying within half a period
    out = periodic_average([0.1, 0.2], [-1.0, 2.0], 1.0)
    assert out == pytest.approx(0.3, abs=1e-14)
    # same but the window straddles the seam
    out = periodic_average([0.05, TWO_PI - 0.05], [2.0, -1.0], TWO_PI)
    assert out == pytest.approx(0.15, abs=1e-14)


def test_periodic_average_negative_weights_wide_spread_rejected():
    with pytest.raises(HalfPeriodAmbiguity):
        periodic_average([0.0, 2.0, TWO_PI - 2.0], [1.5, -0.25, -0.25], TWO_PI)


def test_periodic_average_rejects_nonpositive_period():
    with pytest.raises(ValueError):
        periodic_average([0.0, 0.1], [0.5, 0.5], 0.0)


# ---------------------------------------------------------------------------
# chart manifolds


def test_identity_chart_behaves_like_flat_space():
    m = IdentityChart(3)
    pts = [(1.0, 0.0, 2.0), (3.0, 4.0, 0.0)]
    assert np.allclose(m.new_point(pts, (0.5, 0.5)), [2.0, 2.0, 1.0], atol=1e-15)
    assert np.allclose(m.tangent_vector(pts[0], pts[1]), [2.0, 4.0, -2.0], atol=1e-15)


def test_polar_chart_round_trip():
    m = PolarChart()
    x = np.array([1.2, -0.7])
    assert np.allclose(m.push_forward(m.pull_back(x)), x, atol=1e-14)


def test_polar_chart_average_stays_on_circle():
    m = PolarChart()
    a = 2.0 * np.array([math.cos(0.3), math.sin(0.3)])
    b = 2.0 * np.array([math.cos(-0.3), math.sin(-0.3)])
    assert np.allclose(m.new_point([a, b], (0.5, 0.5)), [2.0, 0.0], atol=1e-14)


def test_polar_chart_weighted_average_is_exact_in_angle():
    m = PolarChart()
    r = 2.0
    pts = [r * np.array([math.cos(t), math.sin(t)]) for t in (0.2, 1.0)]
    out = m.new_point(pts, (0.75, 0.25))
    want = r * np.array([math.cos(0.4), math.sin(0.4)])
    assert np.allclose(out, want, atol=1e-14)


def test_polar_chart_average_across_branch_cut():
    m = PolarChart()
    pts = [2.0 * np.array([math.cos(t), math.sin(t)]) for t in (math.pi - 0.1, -math.pi + 0.1)]
    assert np.allclose(m.new_point(pts, (0.5, 0.5)), [-2.0, 0.0], atol=1e-14)


def test_polar_chart_tangent_is_analytic():
    m = PolarChart()
    r, t1, t2 = 2.0, 0.3, 1.1
    x1 = r * np.array([math.cos(t1), math.sin(t1)])
    x2 = r * np.array([math.cos(t2), math.sin(t2)])
    want = r * (t2 - t1) * np.array([-math.sin(t1), math.cos(t1)])
    assert np.allclose(m.tangent_vector(x1, x2), want, atol=1e-14)
    # purely radial motion has the chord as tangent
    assert np.allclose(m.tangent_vector((1.0, 0.0), (3.0, 0.0)), [2.0, 0.0], atol=1e-14)


def test_polar_chart_rejects_center():
    with pytest.raises(PullBackFailure):
        PolarChart().pull_back((0.0, 0.0))


def test_polar_chart_tangent_across_branch_cut_takes_short_way():
    m = PolarChart()
    x1 = np.array([math.cos(math.pi - 0.2), math.sin(math.pi - 0.2)])
    x2 = np.array([math.cos(math.pi + 0.2), math.sin(math.pi + 0.2)])
    t = m.tangent_vector(x1, x2)
    want = 0.4 * np.array([-math.sin(math.pi - 0.2), math.cos(math.pi - 0.2)])
    assert np.allclose(t, want, atol=1e-14)


def test_spherical_shell_chart_round_trip_and_axis_rejection():
    m = SphericalShellChart()
    x = np.array([0.3, -0.4, 1.2])
    assert np.allclose(m.push_forward(m.pull_back(x)), x, atol=1e-14)
    with pytest.raises(PullBackFailure):
        m.pull_back((0.0, 0.0, 1.0))
    with pytest.raises(PullBackFailure):
        m.pull_back((0.0, 0.0, 0.0))


def test_cylindrical_chart_average():
    m = CylindricalChart()
    pts = [np.array([math.cos(t), math.sin(t), z]) for t, z in ((0.5, 0.0), (-0.5, 1.0))]
    assert np.allclose(m.new_point(pts, (0.5, 0.5)), [1.0, 0.0, 0.5], atol=1e-14)


def test_graded_square_chart_pulls_points_toward_origin():
    m = GradedSquareChart()
    out = m.new_point([(0.0, 0.25), (1.0, 0.25)], (0.5, 0.5))
    assert np.allclose(out, [0.25, 0.25], atol=1e-14)
    with pytest.raises(PullBackFailure):
        m.pull_back((1.5, 0.0))


def test_graded_sine_chart_compresses_toward_the_sides():
    m = GradedSineChart()
    out = m.new_point([(0.0, 0.5), (0.5, 0.5)], (0.5, 0.5))
    # sine grading: chart midpoint of u=0 and u=1/2 is u=1/4 -> x = (1-1/sqrt2)/2
    want_x = 0.5 * math.sin(math.pi * (0.25 - 0.5)) + 0.5
    assert np.allclose(out, [want_x, 0.5], atol=1e-14)
    assert out[0] < 0.25  # dragged toward the x=0 side


def test_chart_fd_gradient_matches_analytic():
    m = PolarChart()
    u = np.array([1.7, 0.6])
    fd = super(PolarChart, m).push_forward_gradient(u)
    assert np.allclose(fd, m.push_forward_gradient(u), atol=1e-8)


# ---------------------------------------------------------------------------
# sphere oracles: projection vs geodesic behavior


def test_projection_oracle_symmetric_midpoint_is_geodesic():
    m = SphereProjectionManifold(center=(0.0, 0.0))
    a, b = np.array([1.0, 0.0]), np.array([0.0, 1.0])
    out = m.new_point([a, b], (0.5, 0.5))
    want = np.array([math.cos(math.pi / 4), math.sin(math.pi / 4)])
    assert np.allclose(out, want, atol=1e-15)


def test_projection_oracle_asymmetric_weights_are_not_geodesic():
    # quarter-weight average of two perpendicular unit vectors: the
    # projected answer is (3,1)/sqrt(10), the constant-speed geodesic
    # answer is (cos pi/8, sin pi/8); they differ by about 0.0709
    m = SphereProjectionManifold(center=(0.0, 0.0))
    a, b = np.array([1.0, 0.0]), np.array([0.0, 1.0])
    out = m.new_point([a, b], (0.75, 0.25))
    assert np.allclose(out, np.array([3.0, 1.0]) / math.sqrt(10.0), atol=1e-15)
    geo = np.array([math.cos(math.pi / 8), math.sin(math.pi / 8)])
    assert np.linalg.norm(out - geo) == pytest.approx(0.0709, abs=5e-4)


def test_projection_oracle_nested_midpoints_are_inconsistent():
    # x*(x*(a,b;1/2,1/2), a; 1/2, 1/2) should equal x*(a,b;3/4,1/4) on a
    # consistent oracle; the projection oracle violates this
    m = SphereProjectionManifold(center=(0.0, 0.0))
    a, b = np.array([1.0, 0.0]), np.array([0.0, 1.0])
    mid = m.new_point([a, b], (0.5, 0.5))
    nested = m.new_point([mid, a], (0.5, 0.5))
    direct = m.new_point([a, b], (0.75, 0.25))
    assert np.linalg.norm(nested - direct) > 0.05


def test_geodesic_oracle_nested_midpoints_are_consistent():
    m = SphericalAverageManifold(center=(0.0, 0.0, 0.0))
    a, b = np.array([1.0, 0.0, 0.0]), np.array([0.0, 1.0, 0.0])
    mid = m.new_point([a, b], (0.5, 0.5))
    nested = m.new_point([mid, a], (0.5, 0.5))
    direct = m.new_point([a, b], (0.75, 0.25))
    assert np.allclose(nested, direct, atol=1e-15)
    assert np.allclose(direct, [math.cos(math.pi / 8), math.sin(math.pi / 8), 0.0],
                       atol=1e-15)


def test_projection_oracle_center_failure():
    m = SphereProjectionManifold(center=(0.0, 0.0))
    with pytest.raises(OracleFailure):
        m.new_point([(1.0, 0.0), (-1.0, 0.0)], (0.5, 0.5))


# ---------------------------------------------------------------------------
# spherical average oracle


def test_spherical_average_two_point_radii_are_affine():
    m = SphericalAverageManifold(center=(0.0, 0.0, 0.0))
    out = m.new_point([(1.0, 0.0, 0.0), (0.0, 3.0, 0.0)], (0.5, 0.5))
    s = math.sqrt(2.0)
    assert np.allclose(out, [s, s, 0.0], atol=1e-14)


def test_spherical_average_three_symmetric_points_hit_the_pole():
    m = SphericalAverageManifold(center=(0.0, 0.0, 0.0))
    th = 0.7
    pts = [np.array([math.sin(th) * math.cos(p), math.sin(th) * math.sin(p), math.cos(th)])
           for p in (0.0, TWO_PI / 3, 2 * TWO_PI / 3)]
    out = m.new_point(pts, (1 / 3, 1 / 3, 1 / 3))
    assert np.allclose(out, [0.0, 0.0, 1.0], atol=1e-14)


def test_spherical_average_zero_weight_points_are_ignored():
    m = SphericalAverageManifold(center=(0.0, 0.0, 0.0))
    a, b = np.array([1.0, 0.0, 0.0]), np.array([0.0, 1.0, 0.0])
    junk = np.array([-1.0, 0.0, 0.0])  # antipodal to a; must not trip anything
    with_zero = m.new_point([a, b, junk], (0.75, 0.25, 0.0))
    without = m.new_point([a, b], (0.75, 0.25))
    assert np.array_equal(with_zero, without)


def test_spherical_average_negative_weights_extrapolate():
    m = SphericalAverageManifold(center=(0.0, 0.0, 0.0))
    a = np.array([math.cos(0.2), math.sin(0.2), 0.0])
    b = np.array([math.cos(0.5), math.sin(0.5), 0.0])
    out = m.new_point([a, b], (2.0, -1.0))  # one step past a, away from b
    assert np.allclose(out, [math.cos(-0.1), math.sin(-0.1), 0.0], atol=1e-13)


def test_spherical_average_antipodal_rejection():
    m = SphericalAverageManifold(center=(0.0, 0.0, 0.0))
    with pytest.raises(AntipodalPoints):
        m.new_point([(1.0, 0.0, 0.0), (-1.0, 0.0, 0.0)], (0.5, 0.5))


def test_spherical_average_batch_matches_scalar():
    m = SphericalAverageManifold(center=(0.0, 0.0, 0.0))
    rng = np.random.default_rng(3)
    pts = rng.normal(size=(20, 4, 3))
    pts /= np.linalg.norm(pts, axis=2, keepdims=True)
    # keep the point sets clustered so the mean is well defined
    pts = pts * 0.3 + np.array([1.0, 0.0, 0.0])
    w = rng.uniform(0.1, 1.0, size=(20, 4))
    w /= w.sum(axis=1, keepdims=True)
    batch = m.new_point_batch(pts, w)
    for k in range(20):
        assert np.allclose(batch[k], m.new_point(pts[k], w[k]), atol=1e-13)


def test_spherical_average_two_point_batch_matches_scalar():
    m = SphericalAverageManifold(center=(0.0, 0.0, 0.0))
    rng = np.random.default_rng(4)
    pts = rng.normal(size=(10, 2, 3))
    pts /= np.linalg.norm(pts, axis=2, keepdims=True)
    w = rng.uniform(0.1, 0.9, size=10)
    w = np.column_stack([1.0 - w, w])
    batch = m.new_point_batch(pts, w)
    for k in range(10):
        assert np.allclose(batch[k], m.new_point(pts[k], w[k]), atol=1e-14)


def test_spherical_average_tangent_is_analytic():
    m = SphericalAverageManifold(center=(0.0, 0.0, 0.0))
    x1 = np.array([1.0, 0.0, 0.0])
    x2 = np.array([0.0, 2.0, 0.0])
    # FD of the geodesic at eps -> (rho2-rho1)*d1 + rho1*omega*perp
    t = m.tangent_vector(x1, x2)
    want = np.array([0.0, math.pi / 2, 0.0]) + np.array([1.0, 0.0, 0.0])
    assert np.allclose(t, want, atol=1e-14)
    fd = m.tangent_vector_fd(x1, x2, 1e-7)
    assert np.allclose(t, fd, atol=1e-6)


def test_spherical_average_center_input_rejected():
    m = SphericalAverageManifold(center=(0.0, 0.0, 0.0))
    with pytest.raises(OracleFailure):
        m.new_point([(0.0, 0.0, 0.0), (1.0, 0.0, 0.0)], (0.5, 0.5))


# ---------------------------------------------------------------------------
# recursive geodesic reduction and its order dependence


def _lonlat_points(ll):
    return np.array([[math.cos(lat) * math.cos(lon),
                      math.cos(lat) * math.sin(lon),
                      math.sin(lat)] for lon, lat in ll])


def _order_spread(manifold, pts, w):
    results = np.array([
        manifold.new_point_recursive(pts[list(p)], w[list(p)])
        for p in itertools.permutations(range(len(pts)))
    ])
    return max(float(np.linalg.norm(results - results[i], axis=1).max())
               for i in range(len(results)))


def test_recursive_two_points_match_geodesic():
    m = SphereGeodesicManifold(center=(0.0, 0.0, 0.0))
    g = SphericalAverageManifold(center=(0.0, 0.0, 0.0))
    a, b = np.array([1.0, 0.0, 0.0]), np.array([0.0, 1.0, 0.0])
    assert np.allclose(m.new_point([a, b], (0.75, 0.25)),
                       g.new_point([a, b], (0.75, 0.25)), atol=1e-15)


def test_recursive_collinear_points_are_order_independent():
    # points on one great circle: slerp is affine in arc length, so every
    # input order folds to the same point (this is why an equatorial test
    # configuration cannot show order dependence)
    m = SphereGeodesicManifold(center=(0.0, 0.0, 0.0))
    pts = _lonlat_points([(0.0, 0.0), (0.3, 0.0), (0.55, 0.0), (0.8, 0.0)])
    w = np.full(4, 0.25)
    assert _order_spread(m, pts, w) < 1e-14


def test_recursive_quadrilateral_is_order_dependent():
    m = SphereGeodesicManifold(center=(0.0, 0.0, 0.0))
    D = 0.8
    pts = _lonlat_points([(0.0, 0.0), (D, 0.0), (D, D / 4), (0.0, D / 4)])
    w = np.full(4, 0.25)
    assert _order_spread(m, pts, w) > 1e-4


def test_recursive_order_dependence_shrinks_cubically():
    # halving the angular spread divides the order-dependence by ~8
    m = SphereGeodesicManifold(center=(0.0, 0.0, 0.0))
    w = np.full(4, 0.25)

    def spread(D):
        pts = _lonlat_points([(0.0, 0.0), (D, 0.0), (D, D / 4), (0.0, D / 4)])
        return _order_spread(m, pts, w)

    factor = spread(0.8) / spread(0.4)
    assert 8.0 <= factor <= 32.0


def test_permuted_mode_is_shuffle_invariant():
    m = SphereGeodesicManifold(center=(0.0, 0.0, 0.0), mode="permuted")
    D = 0.8
    pts = _lonlat_points([(0.0, 0.0), (D, 0.0), (D, D / 4), (0.0, D / 4)])
    w = np.array([0.4, 0.3, 0.2, 0.1])
    base = m.new_point(pts, w)
    rng = np.random.default_rng(11)
    for _ in range(5):
        p = rng.permutation(4)
        assert np.linalg.norm(m.new_point(pts[p], w[p]) - base) <= 1e-12


def test_permuted_mode_rejects_large_point_sets():
    m = SphereGeodesicManifold(center=(0.0, 0.0, 0.0), mode="permuted")
    pts = _lonlat_points([(0.1 * k, 0.05 * k) for k in range(9)])
    w = np.full(9, 1.0 / 9.0)
    with pytest.raises(TooManyPoints):
        m.new_point(pts, w)


def test_geodesic_manifold_rejects_unknown_mode():
    with pytest.raises(ValueError):
        SphereGeodesicManifold(center=(0.0, 0.0, 0.0), mode="sideways")
