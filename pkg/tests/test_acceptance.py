"""Acceptance gate: the eleven shipping criteria for this library.

One test per criterion.  Each prints a single ``[PASS]``/``[FAIL]`` line
with the measured numbers (written through the capture so it always
reaches the terminal), then asserts — the suite output doubles as the
acceptance report.
"""

from __future__ import annotations

import math
import time

import numpy as np
import pytest

from georacle.builders import icosphere, uv_sphere
from georacle.charts import (
    PolarChart,
    SphereGeodesicManifold,
    SphereProjectionManifold,
    periodic_average,
)
from georacle.errors import HalfPeriodAmbiguity
from georacle.experiments import (
    annulus_svd_table,
    inscribed_radius,
    run_refinement,
    sphere_projection_setup,
)
from georacle.felite import table1_experiment
from georacle.mapping import (
    PolynomialManifold,
    _lagrange_d1_1d,
    c1_cubic_edge,
    jacobian_exact,
    jacobian_polynomial,
    place_support_points,
    shape_hessian_real,
    shape_hessian_real_exact,
)
from georacle.mesh import (
    ManifoldRegistry,
    _multilinear_corner_dets,
    annulus_mesh,
    refine_uniform,
)
from georacle.trisurface import ClosestPointProjection, SurfaceProjectionManifold

TWO_PI = 2.0 * math.pi


def _report(capsys, num, title, ok, detail):
    tag = "PASS" if ok else "FAIL"
    with capsys.disabled():
        print(f"[{tag}] {num:2d} {title}: {detail}")
    assert ok, f"{title}: {detail}"


def _polar_annulus(n_sectors=10, r_inner=0.5, r_outer=1.0):
    registry = ManifoldRegistry()
    registry.register(1, PolarChart())
    mesh = annulus_mesh(n_sectors, r_inner, r_outer)
    mesh.set_all_cell_manifolds(1)
    mesh.set_boundary_manifold(1)
    for i in mesh.active_cells():
        for e in mesh.cell_edges(i):
            mesh.set_edge_manifold(e, 1)
    return mesh, registry


def test_01_interpolation_error_degradation(capsys):
    # degree-4 interpolation on the curved spherical shell: refining the
    # mesh but keeping coefficients degrades the error by one order,
    # while the flat control shows no degradation at all
    t0 = time.perf_counter()
    rows = table1_experiment(4, 3)
    order_coarse = math.log2(rows[-2][1] / rows[-1][1])
    order_after = math.log2(rows[-2][2] / rows[-1][2])
    flat = table1_experiment(4, 3, curved=False)
    flat_diff = max(abs(ec - ea) for _, ec, ea in flat)
    elapsed = time.perf_counter() - t0
    ok = (4.5 <= order_coarse <= 5.5 and 3.5 <= order_after <= 4.5
          and flat_diff <= 1.0e-13 and elapsed <= 60.0)
    _report(capsys, 1, "interpolation-error degradation", ok,
            f"orders {order_coarse:.3f} (want 4.5..5.5) / "
            f"{order_after:.3f} (want 3.5..4.5), "
            f"flat |after-coarse| {flat_diff:.1e} <= 1e-13, "
            f"{elapsed:.1f} s <= 60 s")


def test_02_circle_midpoint_goldens(capsys):
    # 3:1 weighted midpoint of two unit-circle points, three ways: the
    # polar chart lands on the arc, projection-after-average does not
    w = np.array([0.75, 0.25])
    pts2 = np.array([[1.0, 0.0], [0.0, 1.0]])
    arc = PolarChart().new_point(pts2, w)
    proj = SphereProjectionManifold(center=(0.0, 0.0)).new_point(pts2, w)
    pts3 = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])
    faceted = SurfaceProjectionManifold(icosphere(4), ClosestPointProjection())
    ico = faceted.new_point(pts3, w)
    e_arc = float(np.abs(arc - [0.9239, 0.3827]).max())
    e_proj = float(np.abs(proj - [0.9487, 0.3162]).max())
    e_ico = float(np.abs(ico - [0.9487, 0.3162, 0.0]).max())
    ok = e_arc <= 5.0e-4 and e_proj <= 5.0e-4 and e_ico <= 2.0e-3
    _report(capsys, 2, "circle midpoint goldens", ok,
            f"arc {e_arc:.1e} <= 5e-4, projection {e_proj:.1e} <= 5e-4, "
            f"faceted {e_ico:.1e} <= 2e-3")


def test_03_jacobian_equivalence(capsys):
    # the oracle-driven Jacobian and the analytic polynomial Jacobian
    # coincide when the oracle is the polynomial manifold itself
    mesh, registry = _polar_annulus(13)
    mesh = refine_uniform(mesh, registry)
    rng = np.random.default_rng(3)
    cells = rng.choice(mesh.active_cells(), size=50, replace=False)
    worst = 0.0
    for c in cells:
        p = int(rng.integers(1, 4))
        mq = place_support_points(mesh, int(c), registry, p)
        oracle = PolynomialManifold(mq)
        xhat = 0.1 + 0.8 * rng.random(2)
        je = jacobian_exact(mesh.cell_vertices(int(c)), oracle, xhat)
        jp = jacobian_polynomial(mq, xhat)
        worst = max(worst, float(np.abs(je - jp).max()))
    ok = worst <= 1.0e-9
    _report(capsys, 3, "jacobian equivalence", ok,
            f"max entry diff {worst:.1e} <= 1e-9 "
            f"(50 curved cells, degrees 1-3)")


def test_04_annulus_mapping_quality(capsys):
    # degree-10 quarter-annulus mapping: transfinite interior points stay
    # well-conditioned, smoothed interior points do not
    t0 = time.perf_counter()
    _, tf_min, _ = annulus_svd_table(10, "transfinite")
    _, lp_min, lp_max = annulus_svd_table(10, "laplace")
    elapsed = time.perf_counter() - t0
    lp_ratio = lp_max / lp_min
    ok = tf_min >= 0.49 and lp_ratio >= 10.0 and elapsed <= 10.0
    _report(capsys, 4, "annulus mapping quality", ok,
            f"transfinite min sigma {tf_min:.4f} >= 0.49, "
            f"smoothed max/min {lp_ratio:.1f} >= 10, "
            f"{elapsed:.1f} s <= 10 s")


def test_05_averaging_order_dependence(capsys):
    # folding points into a recursive geodesic average is order
    # dependent at fourth order in the angular spread; the permuted
    # variant is shuffle invariant by construction
    m = SphereGeodesicManifold(center=(0.0, 0.0, 0.0))
    w = np.full(4, 0.25)
    import itertools

    def lonlat(ll):
        return np.array([[math.cos(lat) * math.cos(lon),
                          math.cos(lat) * math.sin(lon),
                          math.sin(lat)] for lon, lat in ll])

    def spread(D):
        pts = lonlat([(0.0, 0.0), (D, 0.0), (D, D / 4), (0.0, D / 4)])
        results = np.array([
            m.new_point_recursive(pts[list(p)], w[list(p)])
            for p in itertools.permutations(range(4))
        ])
        return max(float(np.linalg.norm(results - results[i], axis=1).max())
                   for i in range(len(results)))

    s_wide, s_half = spread(0.8), spread(0.4)
    factor = s_wide / s_half

    permuted = SphereGeodesicManifold(center=(0.0, 0.0, 0.0), mode="permuted")
    pts = lonlat([(0.0, 0.0), (0.8, 0.0), (0.8, 0.2), (0.0, 0.2)])
    wq = np.array([0.4, 0.3, 0.2, 0.1])
    base = permuted.new_point(pts, wq)
    rng = np.random.default_rng(5)
    dev = max(float(np.linalg.norm(
        permuted.new_point(pts[p], wq[p]) - base))
        for p in (rng.permutation(4) for _ in range(5)))

    ok = s_wide > 1.0e-4 and 8.0 <= factor <= 32.0 and dev <= 1.0e-12
    _report(capsys, 5, "averaging order dependence", ok,
            f"spread {s_wide:.2e} (nonzero), halving factor {factor:.2f} "
            f"in [8,32], permuted dev {dev:.1e} <= 1e-12")


def test_06_refinement_fidelity(capsys):
    # full manifold attachment keeps five generations of vertices on the
    # dyadic radius grid; boundary-only attachment distorts the interior
    mesh, registry = _polar_annulus(10)
    for _ in range(5):
        mesh = refine_uniform(mesh, registry)
    r = np.linalg.norm(mesh.vertices, axis=1)
    grid = 0.5 + 0.5 * np.arange(33) / 32.0
    radius_err = float(np.abs(r[:, None] - grid[None, :]).min(axis=1).max())

    def det_ratio(attach_all):
        m = annulus_mesh(4, 0.25, 1.0)
        if attach_all:
            m.set_all_cell_manifolds(1)
            for i in m.active_cells():
                for e in m.cell_edges(i):
                    m.set_edge_manifold(e, 1)
        m.set_boundary_manifold(1)
        for _ in range(2):
            m = refine_uniform(m, registry)
        dets = np.concatenate([
            _multilinear_corner_dets(m.cell_vertices(i), 2)
            for i in m.active_cells()
        ])
        return float(dets.max() / dets.min())

    distorted = det_ratio(attach_all=False)
    control = det_ratio(attach_all=True)
    ok = radius_err <= 1.0e-9 and distorted > 5.0 and control < distorted
    _report(capsys, 6, "refinement fidelity", ok,
            f"radius err {radius_err:.1e} <= 1e-9 (5 cycles); "
            f"boundary-only det ratio {distorted:.2f} > 5 "
            f"(full-attachment control {control:.2f})")


def test_07_surface_query_acceleration(capsys):
    # tree-accelerated closest-point and ray queries agree with the
    # exhaustive scans and beat them by a wide margin at 10k triangles
    surface = uv_sphere(100, 52)
    rng = np.random.default_rng(7)
    n = 1000
    d = rng.normal(size=(n, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    q = d * rng.uniform(0.8, 1.2, size=n)[:, None]
    # build the tree and trigger all four compiled kernels outside the
    # timers: the comparison is steady-state query throughput
    surface.closest_point_query(q[:1])
    surface.closest_point_query(q[:1], brute=True)
    surface.ray_intersect_query(q[:1], d[:1])
    surface.ray_intersect_query(q[:1], d[:1], brute=True)

    def best_of_two(call):
        times, out = [], None
        for _ in range(2):
            t0 = time.perf_counter()
            out = call()
            times.append(time.perf_counter() - t0)
        return min(times), out

    t_fast, (_, i_fast, d_fast) = best_of_two(
        lambda: surface.closest_point_query(q))
    t_slow, (_, i_slow, d_slow) = best_of_two(
        lambda: surface.closest_point_query(q, brute=True))
    cp_diff = float(np.abs(d_fast - d_slow).max())
    cp_speed = t_slow / t_fast

    origins = rng.normal(size=(n, 3)) * 0.2
    dirs = rng.normal(size=(n, 3))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    r_fast, (t_hit_fast, _) = best_of_two(
        lambda: surface.ray_intersect_query(origins, dirs))
    r_slow, (t_hit_slow, _) = best_of_two(
        lambda: surface.ray_intersect_query(origins, dirs, brute=True))
    ray_diff = float(np.abs(np.nan_to_num(t_hit_fast, nan=-1.0)
                            - np.nan_to_num(t_hit_slow, nan=-1.0)).max())
    ray_speed = r_slow / r_fast

    ok = (cp_diff <= 1.0e-12 and ray_diff <= 1.0e-12
          and np.array_equal(i_fast, i_slow)
          and cp_speed >= 20.0 and ray_speed >= 20.0)
    _report(capsys, 7, "surface query acceleration", ok,
            f"closest-point diff {cp_diff:.1e}, {cp_speed:.0f}x; "
            f"ray diff {ray_diff:.1e}, {ray_speed:.0f}x (want >= 20x)")


def test_08_c1_cubic_edges(capsys):
    # four cubic edges around the unit circle: exact endpoints, parallel
    # one-sided tangents where consecutive edges meet
    polar = PolarChart()
    corners = np.array([[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0], [0.0, -1.0]])
    edges = [c1_cubic_edge(corners[i], corners[(i + 1) % 4], polar)
             for i in range(4)]
    endpoint_err = max(
        float(max(np.abs(e[0] - corners[i]).max(),
                  np.abs(e[3] - corners[(i + 1) % 4]).max()))
        for i, e in enumerate(edges))
    d_end = _lagrange_d1_1d(3, np.array([1.0]))[0]
    d_start = _lagrange_d1_1d(3, np.array([0.0]))[0]
    worst_angle = 0.0
    for i in range(4):
        a = d_end @ edges[i]
        b = d_start @ edges[(i + 1) % 4]
        cosang = float(a @ b / (np.linalg.norm(a) * np.linalg.norm(b)))
        worst_angle = max(worst_angle, math.acos(min(1.0, cosang)))
    ok = endpoint_err <= 1.0e-12 and worst_angle <= 1.0e-8
    _report(capsys, 8, "C1 cubic edges", ok,
            f"endpoint err {endpoint_err:.1e} <= 1e-12, "
            f"shared-vertex angle {worst_angle:.1e} <= 1e-8 rad")


def test_09_second_derivative_consistency(capsys):
    # finite differences of the oracle Jacobian reproduce the analytic
    # Hessians of degree-2 mapped shape functions
    mesh, registry = _polar_annulus(10)
    mesh = refine_uniform(mesh, registry)
    rng = np.random.default_rng(9)
    cells = rng.choice(mesh.active_cells(), size=20, replace=False)
    worst = 0.0
    for c in cells:
        mq = place_support_points(mesh, int(c), registry, 2)
        oracle = PolynomialManifold(mq)
        verts = mesh.cell_vertices(int(c))
        x = 0.2 + 0.6 * rng.random(2)
        for i in range(9):
            analytic = shape_hessian_real(mq, x, i)
            via_fd = shape_hessian_real_exact(verts, oracle, x, i, p=2)
            scale = max(float(np.abs(analytic).max()), 1.0)
            worst = max(worst, float(np.abs(analytic - via_fd).max()) / scale)
    ok = worst <= 1.0e-4
    _report(capsys, 9, "second-derivative consistency", ok,
            f"max relative diff {worst:.1e} <= 1e-4 (20 cells, 9 shapes)")


def test_10_periodic_averaging(capsys):
    # seam crossing averages exactly; half-period separation is rejected
    eps = 1.0e-9
    seam = periodic_average([TWO_PI - eps, eps], [0.5, 0.5], TWO_PI)
    raised = False
    try:
        periodic_average([0.0, math.pi], [0.5, 0.5], TWO_PI)
    except HalfPeriodAmbiguity:
        raised = True
    ok = seam == 0.0 and raised
    _report(capsys, 10, "periodic averaging", ok,
            f"seam midpoint {seam!r} (want exactly 0.0), "
            f"half-period rejected: {raised}")


def test_11_curvature_driven_pipeline(capsys):
    # five adaptive cycles against a faceted sphere: vertices stay on the
    # surface, the curvature indicator decays, cell sizes stay graded
    mesh, registry, surface = sphere_projection_setup()
    bound = 1.0e-6 + (1.0 - inscribed_radius(surface, np.zeros(3)))
    mesh, report = run_refinement(mesh, registry, 5, adaptive=0.3)

    used = sorted({v for i in mesh.active_cells()
                   for v in mesh.cells[i].vertices})
    radius_err = float(np.abs(
        np.linalg.norm(mesh.vertices[used], axis=1) - 1.0).max())

    eta_max = [row["indicator_max"] for row in report.cycles
               if "indicator_max" in row]
    decreasing = all(a > b for a, b in zip(eta_max, eta_max[1:]))

    by_level = {}
    for i in mesh.active_cells():
        by_level.setdefault(mesh.cells[i].level, []).append(
            mesh.cell_diameter(i))
    level_ratio = max(max(ds) / min(ds) for ds in by_level.values())

    ok = (radius_err <= bound and len(eta_max) == 5 and decreasing
          and level_ratio <= 3.0)
    _report(capsys, 11, "curvature-driven pipeline", ok,
            f"radius err {radius_err:.1e} <= {bound:.1e}, "
            f"indicator {eta_max[0]:.2e}->{eta_max[-1]:.2e} "
            f"({'monotone' if decreasing else 'NOT monotone'}), "
            f"per-level diameter ratio {level_ratio:.2f} <= 3")
