"""Polynomial cell mappings built on the two oracle primitives.

A degree-``p`` mapping of a quad/hex cell is a tensor-product Lagrange
interpolant ``F(x̂) = Σ v_i φ_i(x̂)`` through ``(p+1)^dim`` support
points on equidistant reference nodes.  The module provides

* support-point placement through the geometry oracles (edge points
  first, then faces, then the interior, with transfinite-interpolation
  weights, so curved boundaries are honored exactly),
* Jacobians both analytically (differentiating the polynomial) and
  directly from the oracle (the tangent-vector algorithm), plus Newton
  inversion,
* unit normals and (orthonormalized) tangent bases for faces and
  surface cells,
* C1 cubic boundary edges whose end tangents follow the manifold,
* real-space second derivatives of mapped shape functions.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .charts import ChartManifold
from .core import Manifold
from .errors import (
    DegenerateCell,
    DegenerateTangents,
    NewtonDivergence,
    SingularJacobian,
)
from .mesh import ManifoldRegistry, Mesh, _edge_key, _face_key
from .refcell import EDGES, FACES_3D, VERTEX_COORDS, vertex_weights

NEWTON_TOL = 1.0e-11
NEWTON_MAX_ITER = 30

#: reference-space half-width for "L too small" in the exact-Jacobian walk
MIN_STEP = 1.0e-6

#: finite-difference step for the Jacobian derivative in Hessians
HESSIAN_FD_STEP = 1.0e-5


# ---------------------------------------------------------------------------
# 1d equidistant Lagrange basis (values and first/second derivatives)


def _nodes_1d(p: int) -> np.ndarray:
    return np.arange(p + 1) / p if p > 0 else np.zeros(1)


def _lagrange_values_1d(p: int, x: np.ndarray) -> np.ndarray:
    """Basis values, shape (m, p+1); exact product formula."""
    nodes = _nodes_1d(p)
    x = np.asarray(x, dtype=float)
    out = np.ones((x.size, p + 1))
    for i in range(p + 1):
        for j in range(p + 1):
            if j != i:
                out[:, i] *= (x - nodes[j]) / (nodes[i] - nodes[j])
    return out


def _lagrange_d1_1d(p: int, x: np.ndarray) -> np.ndarray:
    """First derivatives, shape (m, p+1)."""
    nodes = _nodes_1d(p)
    x = np.asarray(x, dtype=float)
    out = np.zeros((x.size, p + 1))
    for i in range(p + 1):
        for k in range(p + 1):
            if k == i:
                continue
            term = np.full(x.size, 1.0 / (nodes[i] - nodes[k]))
            for j in range(p + 1):
                if j != i and j != k:
                    term *= (x - nodes[j]) / (nodes[i] - nodes[j])
            out[:, i] += term
    return out


def _lagrange_d2_1d(p: int, x: np.ndarray) -> np.ndarray:
    """Second derivatives, shape (m, p+1)."""
    nodes = _nodes_1d(p)
    x = np.asarray(x, dtype=float)
    out = np.zeros((x.size, p + 1))
    for i in range(p + 1):
        for k in range(p + 1):
            if k == i:
                continue
            for l in range(p + 1):
                if l == i or l == k:
                    continue
                term = np.full(
                    x.size, 1.0 / ((nodes[i] - nodes[k]) * (nodes[i] - nodes[l]))
                )
                for j in range(p + 1):
                    if j not in (i, k, l):
                        term *= (x - nodes[j]) / (nodes[i] - nodes[j])
                out[:, i] += term
    return out


# ---------------------------------------------------------------------------
# tensor-product basis on the unit cell; node order is lexicographic with
# axis 0 fastest, matching the vertex numbering convention


def node_multi_indices(p: int, dim: int) -> np.ndarray:
    """Multi-indices of the (p+1)^dim nodes, shape (n, dim)."""
    grids = np.meshgrid(*([np.arange(p + 1)] * dim), indexing="ij")
    # axis 0 fastest => reverse the meshgrid stacking order
    return np.stack([g.ravel(order="F") for g in grids], axis=1)


def node_coordinates(p: int, dim: int) -> np.ndarray:
    return node_multi_indices(p, dim) / p


def shape_values(p: int, dim: int, xhat) -> np.ndarray:
    """φ_i at one or many reference points; shape (n,) or (m, n)."""
    X = np.atleast_2d(np.asarray(xhat, dtype=float))
    per_axis = [_lagrange_values_1d(p, X[:, k]) for k in range(dim)]
    idx = node_multi_indices(p, dim)
    out = np.ones((X.shape[0], len(idx)))
    for k in range(dim):
        out *= per_axis[k][:, idx[:, k]]
    return out[0] if np.asarray(xhat).ndim == 1 else out


def shape_gradients(p: int, dim: int, xhat) -> np.ndarray:
    """∇̂φ_i; shape (n, dim) or (m, n, dim)."""
    X = np.atleast_2d(np.asarray(xhat, dtype=float))
    vals = [_lagrange_values_1d(p, X[:, k]) for k in range(dim)]
    ders = [_lagrange_d1_1d(p, X[:, k]) for k in range(dim)]
    idx = node_multi_indices(p, dim)
    out = np.empty((X.shape[0], len(idx), dim))
    for a in range(dim):
        g = np.ones((X.shape[0], len(idx)))
        for k in range(dim):
            src = ders[k] if k == a else vals[k]
            g *= src[:, idx[:, k]]
        out[:, :, a] = g
    return out[0] if np.asarray(xhat).ndim == 1 else out


def shape_hessians(p: int, dim: int, xhat) -> np.ndarray:
    """∇̂²φ_i; shape (n, dim, dim) or (m, n, dim, dim)."""
    X = np.atleast_2d(np.asarray(xhat, dtype=float))
    vals = [_lagrange_values_1d(p, X[:, k]) for k in range(dim)]
    ders = [_lagrange_d1_1d(p, X[:, k]) for k in range(dim)]
    secs = [_lagrange_d2_1d(p, X[:, k]) for k in range(dim)]
    idx = node_multi_indices(p, dim)
    out = np.empty((X.shape[0], len(idx), dim, dim))
    for a in range(dim):
        for b in range(dim):
            g = np.ones((X.shape[0], len(idx)))
            for k in range(dim):
                if k == a and k == b:
                    src = secs[k]
                elif k == a or k == b:
                    src = ders[k]
                else:
                    src = vals[k]
                g *= src[:, idx[:, k]]
            out[:, :, a, b] = g
    return out[0] if np.asarray(xhat).ndim == 1 else out


# ---------------------------------------------------------------------------
# the mapping object


@dataclass(frozen=True)
class MappingQ:
    """Degree-``p`` polynomial mapping of one cell."""

    degree: int
    dim: int
    points: np.ndarray  # ((p+1)^dim, spacedim)

    @property
    def spacedim(self) -> int:
        return self.points.shape[1]

    def diameter(self) -> float:
        lo = self.points.min(axis=0)
        hi = self.points.max(axis=0)
        return float(np.linalg.norm(hi - lo))


def map_forward(mq: MappingQ, xhat) -> np.ndarray:
    """F(x̂) = Σ v_i φ_i(x̂); batch-aware."""
    phi = shape_values(mq.degree, mq.dim, xhat)
    return phi @ mq.points


def jacobian_polynomial(mq: MappingQ, xhat) -> np.ndarray:
    """J(x̂) = Σ v_i ∇̂φ_i(x̂), shape (spacedim, dim); batch-aware."""
    grad = shape_gradients(mq.degree, mq.dim, xhat)
    if grad.ndim == 2:
        return np.einsum("id,ie->ed", grad, mq.points)
    return np.einsum("qid,ie->qed", grad, mq.points)


def inverse_map(mq: MappingQ, x) -> np.ndarray:
    """Newton solve for x̂ with ‖F(x̂) − x‖ ≤ 1e−11 · cell diameter."""
    x = np.asarray(x, dtype=float)
    tol = NEWTON_TOL * max(mq.diameter(), 1.0e-300)
    xhat = np.full(mq.dim, 0.5)
    r = map_forward(mq, xhat) - x
    res = float(np.linalg.norm(r))
    for _ in range(NEWTON_MAX_ITER):
        if res <= tol:
            if np.any(xhat < -1.0) or np.any(xhat > 2.0):
                raise NewtonDivergence(
                    f"inverse mapping converged far outside the unit cell: {xhat}"
                )
            return xhat
        j = jacobian_polynomial(mq, xhat)
        try:
            if j.shape[0] == j.shape[1]:
                step = np.linalg.solve(j, r)
            else:  # codimension > 0: least-squares normal equations
                step = np.linalg.solve(j.T @ j, j.T @ r)
        except np.linalg.LinAlgError as e:
            raise NewtonDivergence(f"singular Jacobian during inversion: {e}") from e
        lam = 1.0
        for _ in range(6):
            trial = xhat - lam * step
            rt = map_forward(mq, trial) - x
            rtn = float(np.linalg.norm(rt))
            if rtn < res:
                break
            lam *= 0.5
        else:
            raise NewtonDivergence("inverse mapping stalled (no descent step)")
        xhat, r, res = trial, rt, rtn
    if res <= tol and not (np.any(xhat < -1.0) or np.any(xhat > 2.0)):
        return xhat
    raise NewtonDivergence(
        f"inverse mapping did not converge in {NEWTON_MAX_ITER} iterations "
        f"(residual {res:.3e}, tolerance {tol:.3e})"
    )


# ---------------------------------------------------------------------------
# support-point placement


def _axis_blend(t: float, side: int) -> float:
    return t if side else 1.0 - t


@lru_cache(maxsize=None)
def _tfi_lattice(p: int, d: int):
    """Transfinite-interpolation weights on the d-dimensional node lattice.

    Returns (interior multi-indices, boundary multi-indices, weights)
    where ``weights[r, c]`` is the inclusion–exclusion blend of boundary
    node ``c`` contributing to interior node ``r``:  + single-axis
    projections, − pairwise, + triple.  Shared targets (corners appear
    in several projection terms) have their weights summed, which is
    equivalent for any oracle because the average is linear in the
    weight attached to a repeated point.
    """
    interior = [mi for mi in itertools.product(range(1, p), repeat=d)]
    boundary = [mi for mi in itertools.product(range(p + 1), repeat=d)
                if any(c in (0, p) for c in mi)]
    col = {mi: k for k, mi in enumerate(boundary)}
    W = np.zeros((len(interior), len(boundary)))
    for r, mi in enumerate(interior):
        ts = [c / p for c in mi]
        for nsel in range(1, d + 1):
            sign = 1.0 if nsel % 2 else -1.0
            for axes in itertools.combinations(range(d), nsel):
                for sides in itertools.product((0, 1), repeat=nsel):
                    mj = list(mi)
                    weight = sign
                    for k, side in zip(axes, sides):
                        mj[k] = side * p
                        weight *= _axis_blend(ts[k], side)
                    W[r, col[tuple(mj)]] += weight
    return tuple(interior), tuple(boundary), W


def place_support_points(mesh: Mesh, cell_index: int,
                         registry: ManifoldRegistry, p: int,
                         interior: str = "transfinite") -> MappingQ:
    """Build the degree-``p`` mapping of one cell through the oracles.

    Vertices are copied; edge nodes are 2-point oracle averages at
    relative positions j/p; face and interior nodes use transfinite-
    interpolation weights over the already-placed lower-dimensional
    nodes, evaluated on the entity's governing manifold.  Oracle queries
    are batched per entity class (all same-oracle edges in one call,
    then faces, then the interior) so vectorizing oracles answer a cell
    in a handful of calls.  The ``interior="laplace"`` variant instead
    solves the 5-point discrete Laplace equation in reference indices
    for the interior nodes (a deliberately geometry-blind placement used
    for comparison experiments).
    """
    if p < 1:
        raise ValueError(f"mapping degree must be ≥ 1, got {p}")
    if interior not in ("transfinite", "laplace"):
        raise ValueError(f"unknown interior placement rule {interior!r}")
    dim = mesh.dim
    cell = mesh.cells[cell_index]
    vs = cell.vertices
    idx = node_multi_indices(p, dim)
    n = len(idx)
    pts = np.empty((n, mesh.spacedim))
    placed = np.zeros(n, dtype=bool)
    pos = {tuple(mi): i for i, mi in enumerate(idx)}

    # vertices
    for v, coords in enumerate(VERTEX_COORDS[dim]):
        mi = tuple(int(c) * p for c in coords)
        pts[pos[mi]] = mesh.vertices[vs[v]]
        placed[pos[mi]] = True

    def run_groups(groups):
        """Fire one batched oracle call per group and scatter the results."""
        for oracle, gather, weights, targets in groups.values():
            out = oracle.new_point_batch(np.asarray(gather),
                                         np.asarray(weights))
            for t, x in zip(targets, out):
                pts[t] = x
                placed[t] = True

    edge_owner = mesh._cell_of_edge()
    face_owner = mesh._cell_of_face() if dim == 3 else {}

    # edge nodes: one 2-point batch per distinct oracle
    if p > 1:
        groups: dict = {}
        tline = np.arange(1, p) / p
        for a, b in EDGES[dim]:
            key = _edge_key(vs[a], vs[b])
            oracle = registry.resolve(mesh.edge_manifold_id(key, edge_owner))
            pa = mesh.vertices[vs[a]]
            pb = mesh.vertices[vs[b]]
            ca = VERTEX_COORDS[dim][a]
            cb = VERTEX_COORDS[dim][b]
            g = groups.setdefault(id(oracle), (oracle, [], [], []))
            for j, t in enumerate(tline, start=1):
                mi = tuple(int(round(x)) for x in (ca * p + (cb - ca) * j))
                g[1].append((pa, pb))
                g[2].append((1.0 - t, t))
                g[3].append(pos[mi])
        run_groups(groups)

    # face nodes (3d): one batch per distinct oracle over face-boundary nodes
    if dim == 3 and p > 1:
        rows, cols, W = _tfi_lattice(p, 2)
        groups = {}
        for f, fverts in enumerate(FACES_3D):
            fkey = _face_key([vs[k] for k in fverts])
            oracle = registry.resolve(mesh.face_manifold_id(fkey, face_owner))
            pinned_axis = f // 2
            side = f % 2
            free = [k for k in range(3) if k != pinned_axis]

            def to_cell(sub):
                mi = [0, 0, 0]
                mi[pinned_axis] = side * p
                mi[free[0]] = sub[0]
                mi[free[1]] = sub[1]
                return pos[tuple(mi)]

            boundary_pts = pts[[to_cell(c) for c in cols]]
            g = groups.setdefault(id(oracle), (oracle, [], [], []))
            for r, sub in enumerate(rows):
                g[1].append(boundary_pts)
                g[2].append(W[r])
                g[3].append(to_cell(sub))
        run_groups(groups)

    # interior nodes
    if p > 1 and interior == "laplace":
        _place_laplace_interior(pts, pos, placed, p, dim)
    elif p > 1:
        cell_oracle = registry.resolve(cell.manifold_id)
        rows, cols, W = _tfi_lattice(p, dim)
        boundary_pts = pts[[pos[c] for c in cols]]
        gather = np.broadcast_to(boundary_pts,
                                 (len(rows),) + boundary_pts.shape)
        out = cell_oracle.new_point_batch(gather, W)
        for sub, x in zip(rows, out):
            pts[pos[sub]] = x
            placed[pos[sub]] = True

    assert placed.all()
    return MappingQ(degree=p, dim=dim, points=pts)


def place_all_support_points(mesh: Mesh, registry: ManifoldRegistry, p: int,
                             chunk: int = None) -> tuple:
    """Support points of every active cell, batched mesh-wide.

    Same placement rules as :func:`place_support_points` (transfinite
    interior), but oracle queries are grouped across cells — processed
    in chunks of ``chunk`` cells to bound memory — which is what makes
    degree-4+ placement on thousand-cell meshes affordable.  Returns
    ``(active_ids, points)`` with ``points[k]`` the ``(p+1)^dim`` node
    coordinates of active cell ``active_ids[k]`` in lattice order.
    """
    if p < 1:
        raise ValueError(f"mapping degree must be ≥ 1, got {p}")
    dim = mesh.dim
    if chunk is None:
        # keep the widest gather (interior rows x boundary points) at
        # roughly 1.5M entries so batch temporaries stay tens of MB
        per_cell = max(1, (p - 1) ** dim) * ((p + 1) ** dim - (p - 1) ** dim)
        chunk = min(4096, max(1, int(1.5e6 / per_cell)))
    active = mesh.active_cells()
    idx = node_multi_indices(p, dim)
    nloc = len(idx)
    pos = {tuple(mi): i for i, mi in enumerate(idx)}
    pts_all = np.empty((len(active), nloc, mesh.spacedim))

    # vertices, all cells at once
    vslot = [pos[tuple(int(c) * p for c in coords)]
             for coords in VERTEX_COORDS[dim]]
    cell_verts = np.array([mesh.cells[i].vertices for i in active])
    pts_all[:, vslot, :] = mesh.vertices[cell_verts]
    if p == 1:
        return active, pts_all

    edge_owner = mesh._cell_of_edge()
    face_owner = mesh._cell_of_face() if dim == 3 else {}

    def run(groups):
        for oracle, gather, weights, targets in groups.values():
            out = oracle.new_point_batch(np.asarray(gather),
                                         np.asarray(weights))
            for (k, slot), x in zip(targets, out):
                pts_all[k, slot] = x

    edge_slots = []
    tline = np.arange(1, p) / p
    for a, b in EDGES[dim]:
        ca = VERTEX_COORDS[dim][a]
        cb = VERTEX_COORDS[dim][b]
        slots = [pos[tuple(int(round(x)) for x in (ca * p + (cb - ca) * j))]
                 for j in range(1, p)]
        edge_slots.append((a, b, slots))

    if dim == 3:
        frows, fcols, FW = _tfi_lattice(p, 2)
        face_slots = []
        for f, fverts in enumerate(FACES_3D):
            pinned_axis = f // 2
            side = f % 2
            free = [k for k in range(3) if k != pinned_axis]

            def to_cell(sub):
                mi = [0, 0, 0]
                mi[pinned_axis] = side * p
                mi[free[0]] = sub[0]
                mi[free[1]] = sub[1]
                return pos[tuple(mi)]

            face_slots.append((fverts,
                               [to_cell(c) for c in fcols],
                               [to_cell(r) for r in frows]))

    irows, icols, IW = _tfi_lattice(p, dim)
    icol_slots = [pos[c] for c in icols]
    irow_slots = [pos[r] for r in irows]

    for lo in range(0, len(active), chunk):
        part = range(lo, min(lo + chunk, len(active)))

        groups: dict = {}
        for k in part:
            vs = mesh.cells[active[k]].vertices
            for a, b, slots in edge_slots:
                key = _edge_key(vs[a], vs[b])
                oracle = registry.resolve(
                    mesh.edge_manifold_id(key, edge_owner))
                pa = mesh.vertices[vs[a]]
                pb = mesh.vertices[vs[b]]
                g = groups.setdefault(id(oracle), (oracle, [], [], []))
                for t, slot in zip(tline, slots):
                    g[1].append((pa, pb))
                    g[2].append((1.0 - t, t))
                    g[3].append((k, slot))
        run(groups)

        if dim == 3:
            groups = {}
            for k in part:
                vs = mesh.cells[active[k]].vertices
                for fverts, col_slots, row_slots in face_slots:
                    fkey = _face_key([vs[j] for j in fverts])
                    oracle = registry.resolve(
                        mesh.face_manifold_id(fkey, face_owner))
                    boundary = pts_all[k, col_slots]
                    g = groups.setdefault(id(oracle), (oracle, [], [], []))
                    for r, slot in enumerate(row_slots):
                        g[1].append(boundary)
                        g[2].append(FW[r])
                        g[3].append((k, slot))
            run(groups)

        groups = {}
        for k in part:
            oracle = registry.resolve(mesh.cells[active[k]].manifold_id)
            boundary = pts_all[k, icol_slots]
            g = groups.setdefault(id(oracle), (oracle, [], [], []))
            for r, slot in enumerate(irow_slots):
                g[1].append(boundary)
                g[2].append(IW[r])
                g[3].append((k, slot))
        run(groups)

    return active, pts_all


def _place_laplace_interior(pts, pos, placed, p: int, dim: int) -> None:
    """Interior nodes from the discrete Laplace equation in index space."""
    if dim != 2:
        raise ValueError("Laplace interior placement is implemented for quads")
    interior = [(i, j) for j in range(1, p) for i in range(1, p)]
    order = {mi: k for k, mi in enumerate(interior)}
    m = len(interior)
    A = np.zeros((m, m))
    rhs = np.zeros((m, pts.shape[1]))
    for mi, k in order.items():
        A[k, k] = 4.0
        i, j = mi
        for nb in ((i - 1, j), (i + 1, j), (i, j - 1), (i, j + 1)):
            if nb in order:
                A[k, order[nb]] = -1.0
            else:
                rhs[k] += pts[pos[nb]]
    sol = np.linalg.solve(A, rhs)
    for mi, k in order.items():
        pts[pos[mi]] = sol[k]
        placed[pos[mi]] = True


# ---------------------------------------------------------------------------
# exact (oracle-driven) Jacobian


def jacobian_exact(vertices, oracle: Manifold, xhat) -> np.ndarray:
    """Tangent-space Jacobian of the d-linear cell through its oracle.

    Three steps: map x̂₀ through ``new_point`` with d-linear weights;
    step to the farthest in-cell point x̂₀ ± ê_i L_i along each reference
    axis and map it; take ``tangent_vector(x₀, x_i) / L_i`` (sign of the
    step applied) as column i.
    """
    verts = np.atleast_2d(np.asarray(vertices, dtype=float))
    nv = len(verts)
    dim = {2: 1, 4: 2, 8: 3}.get(nv)
    if dim is None:
        raise ValueError(f"{nv} vertices do not form a line/quad/hex cell")
    xhat = np.atleast_1d(np.asarray(xhat, dtype=float))
    if xhat.shape != (dim,):
        raise ValueError(f"reference point must have {dim} coordinates")
    x0 = oracle.new_point(verts, vertex_weights(xhat))
    cols = []
    for i in range(dim):
        up = 1.0 - xhat[i]
        down = xhat[i]
        sign = 1.0 if up >= down else -1.0  # center tie-break: +ê_i
        length = max(up, down)
        if length < MIN_STEP:
            raise DegenerateCell(
                f"cannot step away from x̂ along axis {i} (room {length:.1e})"
            )
        xi = xhat.copy()
        xi[i] += sign * length
        x_i = oracle.new_point(verts, vertex_weights(xi))
        cols.append(sign * oracle.tangent_vector(x0, x_i) / length)
    return np.column_stack(cols)


def jacobian_exact_cell(mesh: Mesh, cell_index: int,
                        registry: ManifoldRegistry, xhat) -> np.ndarray:
    cell = mesh.cells[cell_index]
    verts = mesh.vertices[list(cell.vertices)]
    return jacobian_exact(verts, registry.resolve(cell.manifold_id), xhat)


# ---------------------------------------------------------------------------
# normals and tangent bases


def orthonormal_basis(vectors) -> np.ndarray:
    """Gram–Schmidt; raises if the input does not span its count."""
    basis = []
    for v in np.atleast_2d(np.asarray(vectors, dtype=float)):
        u = v.copy()
        for b in basis:
            u -= (u @ b) * b
        n = float(np.linalg.norm(u))
        if n < 1.0e-12:
            raise DegenerateTangents(
                "tangent vectors are linearly dependent (Gram–Schmidt collapse)"
            )
        basis.append(u / n)
    return np.array(basis)


def tangent_basis(vertices, oracle: Manifold, xhat,
                  orthonormal: bool = False) -> np.ndarray:
    """Rows are the tangent vectors (J columns), optionally orthonormalized."""
    j = jacobian_exact(vertices, oracle, xhat)
    t = j.T
    return orthonormal_basis(t) if orthonormal else t


def normal_from_tangents(tangents) -> np.ndarray:
    """Unit normal via the wedge product of spacedim−1 tangents.

    One tangent in 2d space: 90° rotation (t_y, −t_x).  Two tangents in
    3d space: cross product.
    """
    t = np.atleast_2d(np.asarray(tangents, dtype=float))
    if t.shape == (1, 2):
        n = np.array([t[0, 1], -t[0, 0]])
    elif t.shape == (2, 3):
        n = np.cross(t[0], t[1])
    else:
        raise ValueError(f"need spacedim−1 tangents, got shape {t.shape}")
    norm = float(np.linalg.norm(n))
    if norm < 1.0e-12:
        raise DegenerateTangents("wedge of tangent vectors vanishes")
    return n / norm


#: local face (codim-1 entity) -> its corner vertices, 2d cells: the edges
_CELL_FACES = {2: EDGES[2], 3: FACES_3D}


def face_normal(mesh: Mesh, cell_index: int, registry: ManifoldRegistry,
                face: int, xhat_face) -> np.ndarray:
    """Outward unit normal of a volume cell's face at face coordinates."""
    if mesh.dim != mesh.spacedim:
        raise ValueError("face_normal expects a volume mesh; "
                         "use surface_normal for codimension-1 cells")
    cell = mesh.cells[cell_index]
    local = _CELL_FACES[mesh.dim][face]
    fverts = mesh.vertices[[cell.vertices[k] for k in local]]
    if mesh.dim == 2:
        key = _edge_key(cell.vertices[local[0]], cell.vertices[local[1]])
        mid = mesh.edge_manifold_id(key, mesh._cell_of_edge())
    else:
        key = _face_key([cell.vertices[k] for k in local])
        mid = mesh.face_manifold_id(key, mesh._cell_of_face())
    oracle = registry.resolve(mid)
    tangents = tangent_basis(fverts, oracle, xhat_face)
    n = normal_from_tangents(tangents)
    # orient away from the owning cell
    w = vertex_weights(np.atleast_1d(np.asarray(xhat_face, dtype=float)))
    x_face = w @ fverts
    x_center = mesh.cell_vertices(cell_index).mean(axis=0)
    if float(n @ (x_face - x_center)) < 0.0:
        n = -n
    return n


def surface_normal(mesh: Mesh, cell_index: int, registry: ManifoldRegistry,
                   xhat) -> np.ndarray:
    """Winding-oriented unit normal of a surface cell (dim = spacedim−1)."""
    if mesh.dim != mesh.spacedim - 1:
        raise ValueError("surface_normal expects a codimension-1 cell")
    cell = mesh.cells[cell_index]
    verts = mesh.vertices[list(cell.vertices)]
    oracle = registry.resolve(cell.manifold_id)
    return normal_from_tangents(tangent_basis(verts, oracle, xhat))


# ---------------------------------------------------------------------------
# C1 cubic boundary edges


def c1_cubic_edge(va, vb, oracle: Manifold) -> np.ndarray:
    """Support points of a cubic edge whose end tangents follow the manifold.

    The cubic interpolates both vertices and its end tangent directions
    equal the oracle's tangent directions there (magnitude: chord length,
    the free parameter).  Returns the 4 equidistant-node support points;
    the interior two generally do NOT lie on the manifold.
    """
    va = np.asarray(va, dtype=float)
    vb = np.asarray(vb, dtype=float)
    chord = float(np.linalg.norm(vb - va))
    if chord < 1.0e-14:
        raise DegenerateTangents("cubic edge endpoints coincide")
    ta = oracle.tangent_vector(va, vb)
    tb = -oracle.tangent_vector(vb, va)
    na, nb = np.linalg.norm(ta), np.linalg.norm(tb)
    if min(na, nb) < 1.0e-14:
        raise DegenerateTangents("vanishing manifold tangent at an edge end")
    ma = chord * ta / na
    mb = chord * tb / nb

    def hermite(t):
        h00 = 2 * t**3 - 3 * t**2 + 1
        h10 = t**3 - 2 * t**2 + t
        h01 = -2 * t**3 + 3 * t**2
        h11 = t**3 - t**2
        return h00 * va + h10 * ma + h01 * vb + h11 * mb

    return np.array([va, hermite(1.0 / 3.0), hermite(2.0 / 3.0), vb])


# ---------------------------------------------------------------------------
# real-space second derivatives of mapped shape functions


def _hessian_from_parts(J, T, ghat, Hhat) -> np.ndarray:
    """∇²φ = J⁻ᵀ∇̂²φ̂J⁻¹ − Σ_b ∂̂_bφ̂ · J⁻ᵀ[(∇̂J)_b-contracted]J⁻¹ terms."""
    dim = J.shape[1]
    if J.shape[0] != dim:
        raise SingularJacobian("second derivatives need a square Jacobian")
    det = float(np.linalg.det(J))
    scale = float(np.abs(J).max()) or 1.0
    if abs(det) < 1.0e-13 * scale**dim:
        raise SingularJacobian(f"Jacobian is singular (det {det:.3e})")
    A = np.linalg.inv(J)  # A[b, a] = ∂x̂_b/∂x_a
    term1 = np.einsum("ba,bd,dc->ac", A, Hhat, A)
    term2 = np.einsum("b,be,egf,ga,fc->ac", ghat, A, T, A, A)
    return term1 - term2


def shape_hessian_real(mq: MappingQ, xhat, i: int) -> np.ndarray:
    """Analytic variant: ∇̂J from differentiating the polynomial mapping."""
    xhat = np.asarray(xhat, dtype=float)
    J = jacobian_polynomial(mq, xhat)
    hess = shape_hessians(mq.degree, mq.dim, xhat)
    # T[e, g, f] = ∂²F_e/∂x̂_g∂x̂_f
    T = np.einsum("igf,ie->egf", hess, mq.points)
    ghat = shape_gradients(mq.degree, mq.dim, xhat)[i]
    Hhat = hess[i]
    return _hessian_from_parts(J, T, ghat, Hhat)


def shape_hessian_real_exact(vertices, oracle: Manifold, xhat, i: int,
                             p: int, fd_step: float = HESSIAN_FD_STEP) -> np.ndarray:
    """Oracle variant: ∇̂J by central finite differences of jacobian_exact."""
    xhat = np.asarray(xhat, dtype=float)
    dim = xhat.size
    J = jacobian_exact(vertices, oracle, xhat)
    T = np.empty((J.shape[0], dim, dim))
    for f in range(dim):
        e = np.zeros(dim)
        e[f] = fd_step
        jp = jacobian_exact(vertices, oracle, xhat + e)
        jm = jacobian_exact(vertices, oracle, xhat - e)
        T[:, :, f] = (jp - jm) / (2.0 * fd_step)
    ghat = shape_gradients(p, dim, xhat)[i]
    Hhat = shape_hessians(p, dim, xhat)[i]
    return _hessian_from_parts(J, T, ghat, Hhat)


# ---------------------------------------------------------------------------
# a polynomial mapping viewed as a chart oracle


class PolynomialManifold(ChartManifold):
    """The degree-p mapping itself used as the geometry oracle.

    Averaging happens in reference coordinates (pull-back via Newton
    inversion); tangent vectors are J·Δx̂.  With this oracle the direct
    tangent-vector Jacobian and the polynomial Jacobian agree to
    round-off, which is the consistency check between the two routes.
    """

    def __init__(self, mq: MappingQ):
        super().__init__(chartdim=mq.dim)
        self.mq = mq

    def pull_back(self, x):
        return inverse_map(self.mq, x)

    def push_forward(self, u):
        return map_forward(self.mq, np.asarray(u, dtype=float))

    def push_forward_gradient(self, u):
        return jacobian_polynomial(self.mq, np.asarray(u, dtype=float))
