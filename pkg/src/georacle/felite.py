"""Minimal scalar Lagrange finite-element layer.

Just enough machinery to quantify how mesh refinement interacts with
curved geometry: nodal interpolation on mapped cells, Gauss quadrature
of L2 errors, and the parent-to-child transfer of a field in reference
coordinates.  The transfer is exact as a polynomial on the reference
cell; on curved meshes the refined cells' support points move onto the
manifold, so the transferred field — measured against the new geometry —
loses one order of accuracy compared to direct interpolation.  The
degradation experiment (:func:`table1_experiment`) makes that loss
measurable; on flat meshes the transfer is the identity and the two
errors coincide to round-off.

Scope is deliberately small: scalar fields, uniform isotropic
refinement, volume meshes for integration.  No PDE solves, no hanging
node constraints.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from functools import lru_cache
import itertools

import numpy as np
from numpy.polynomial.legendre import leggauss

from .charts import SphericalAverageManifold
from .errors import NoChildren
from .mapping import (
    node_coordinates,
    place_all_support_points,
    shape_gradients,
    shape_values,
)
from .mesh import ManifoldRegistry, Mesh, refine_uniform, shell_mesh

#: two support points closer than this (max-norm) are one global node
DEDUP_RESOLUTION = 1.0e-10
#: hash bucket width in units of the resolution; points this close to a
#: bucket wall also probe the neighboring bucket
_BUCKET_GUARD = 0.49


# ---------------------------------------------------------------------------
# quadrature


@dataclass(frozen=True)
class QuadratureRule:
    """Tensor-product Gauss rule on the unit cell [0,1]^dim."""

    points: np.ndarray   # (nq, dim)
    weights: np.ndarray  # (nq,), summing to 1


@lru_cache(maxsize=None)
def _gauss_1d(n: int):
    x, w = leggauss(n)
    return (x + 1.0) / 2.0, w / 2.0


@lru_cache(maxsize=None)
def gauss_rule(n: int, dim: int) -> QuadratureRule:
    """n-point Gauss rule per axis; exact for degree 2n−1 per axis."""
    if n < 1:
        raise ValueError(f"need at least one quadrature point, got {n}")
    x, w = _gauss_1d(n)
    pts = np.array(list(itertools.product(*([x] * dim))))[:, ::-1]
    wts = np.array([np.prod(c) for c in itertools.product(*([w] * dim))])
    return QuadratureRule(points=pts, weights=wts)


@lru_cache(maxsize=None)
def _subdivided_rule(n: int, dim: int) -> QuadratureRule:
    """The same rule applied on each half-cell of the 2^dim subdivision.

    Integrating a coarse cell with this composite rule samples exactly
    the points a uniformly refined flat mesh would sample, which is what
    lets the flat-control comparison in :func:`table1_experiment` agree
    to round-off rather than to quadrature resolution.
    """
    base = gauss_rule(n, dim)
    pts, wts = [], []
    for c in range(2 ** dim):
        offset = np.array([(c >> k) & 1 for k in range(dim)], dtype=float)
        pts.append((base.points + offset) / 2.0)
        wts.append(base.weights / 2.0 ** dim)
    return QuadratureRule(points=np.vstack(pts), weights=np.concatenate(wts))


# ---------------------------------------------------------------------------
# fields and their global nodes


@dataclass(frozen=True)
class FEField:
    """A continuous scalar Lagrange field of degree ``degree``.

    ``node_coords`` holds every distinct global support point once
    (shared cell-boundary nodes deduplicated at ``DEDUP_RESOLUTION``);
    ``cell_nodes[k]`` maps the lattice nodes of active cell
    ``active_ids[k]`` to rows of ``node_coords``/``coefficients``.
    """

    mesh: Mesh
    degree: int
    active_ids: tuple
    cell_nodes: np.ndarray    # (ncells, (p+1)^dim) int64
    node_coords: np.ndarray   # (ndof, spacedim)
    coefficients: np.ndarray  # (ndof,)

    @property
    def n_dofs(self) -> int:
        return len(self.node_coords)

    def cell_points(self, k: int) -> np.ndarray:
        """Support points of the k-th active cell, lattice order."""
        return self.node_coords[self.cell_nodes[k]]


def _dedup_nodes(flat: np.ndarray):
    """Merge coincident rows of ``flat``; returns (coords, index).

    Buckets coordinates at ``DEDUP_RESOLUTION``; rows landing close to a
    bucket wall additionally probe the bucket on the other side, so two
    copies of one node that straddle a wall (placement round-off enters
    through cell-local orientation) still merge.
    """
    scaled = flat / DEDUP_RESOLUTION
    keys = np.rint(scaled)
    frac = scaled - keys
    keys = keys.astype(np.int64)
    risky = np.abs(frac) > _BUCKET_GUARD
    any_risky = risky.any(axis=1)
    shift = np.sign(frac).astype(np.int64)

    table: dict = {}
    coords: list = []
    index = np.empty(len(flat), dtype=np.int64)
    key_rows = list(map(tuple, keys.tolist()))
    for r, key in enumerate(key_rows):
        hit = table.get(key)
        if hit is None and any_risky[r]:
            axes = np.nonzero(risky[r])[0]
            for picks in itertools.product((False, True), repeat=len(axes)):
                if not any(picks):
                    continue
                probe = list(key)
                for a, on in zip(axes, picks):
                    if on:
                        probe[a] += shift[r, a]
                g = table.get(tuple(probe))
                if g is not None and np.max(np.abs(coords[g] - flat[r])) \
                        <= 2.0 * DEDUP_RESOLUTION:
                    hit = g
                    break
        if hit is None:
            hit = len(coords)
            coords.append(flat[r])
            table[key] = hit
        index[r] = hit
    return np.array(coords), index


def build_field(mesh: Mesh, registry: ManifoldRegistry, p: int) -> FEField:
    """Global node layout for degree ``p`` on ``mesh``; coefficients zero.

    Support points are placed through the manifold oracles, so nodes of
    curved cells lie on the geometry, and the deduplicated coordinates
    make the layout conforming across cell boundaries.
    """
    active, pts = place_all_support_points(mesh, registry, p)
    ncells, nloc, sd = pts.shape
    coords, index = _dedup_nodes(pts.reshape(-1, sd))
    return FEField(
        mesh=mesh,
        degree=p,
        active_ids=tuple(active),
        cell_nodes=index.reshape(ncells, nloc),
        node_coords=coords,
        coefficients=np.zeros(len(coords)),
    )


def _sample(f, X: np.ndarray) -> np.ndarray:
    """Evaluate ``f`` at the rows of ``X``; accepts batch or scalar f."""
    try:
        vals = np.asarray(f(X), dtype=float)
        if vals.shape == (len(X),):
            return vals
    except Exception:
        pass
    return np.array([float(f(x)) for x in X])


def interpolate(mesh: Mesh, registry: ManifoldRegistry, p: int, f) -> FEField:
    """Degree-``p`` field whose coefficients are ``f`` at the global nodes."""
    field = build_field(mesh, registry, p)
    return replace(field, coefficients=_sample(f, field.node_coords))


# ---------------------------------------------------------------------------
# L2 error


def l2_error(field: FEField, f_exact, q: int, subdivide: bool = False) -> float:
    """‖u_h − f‖_L2 over the field's mesh by Gauss quadrature.

    ``q`` is the point count per axis (must be ≥ p+1); the Jacobian is
    that of the cell's own degree-``p`` polynomial mapping, so the error
    is measured against the mesh's resolved geometry.  With
    ``subdivide`` the rule is applied per half-cell of the reference
    subdivision (see :func:`_subdivided_rule`).
    """
    p = field.degree
    mesh = field.mesh
    if q < p + 1:
        raise ValueError(f"quadrature order {q} too low for degree {p}")
    if mesh.dim != mesh.spacedim:
        raise ValueError("l2_error integrates volume meshes only")
    dim = mesh.dim
    rule = _subdivided_rule(q, dim) if subdivide else gauss_rule(q, dim)
    V = shape_values(p, dim, rule.points)        # (nq, nloc)
    G = shape_gradients(p, dim, rule.points)     # (nq, nloc, dim)
    nq, nloc = V.shape
    Gflat = np.ascontiguousarray(G.transpose(0, 2, 1)).reshape(nq * dim, nloc)

    total = 0.0
    ncells = len(field.active_ids)
    for lo in range(0, ncells, 512):
        sl = slice(lo, min(lo + 512, ncells))
        pts = field.node_coords[field.cell_nodes[sl]]       # (c, nloc, sd)
        uh = field.coefficients[field.cell_nodes[sl]] @ V.T  # (c, nq)
        X = np.matmul(V, pts)                                # (c, nq, sd)
        J = np.matmul(Gflat, pts).reshape(len(pts), nq, dim, dim)
        detJ = np.abs(np.linalg.det(J))  # det(J^T) = det(J)
        fx = _sample(f_exact, X.reshape(-1, mesh.spacedim)).reshape(uh.shape)
        total += float(np.einsum("q,cq->", rule.weights, (uh - fx) ** 2 * detJ))
    return float(np.sqrt(total))


# ---------------------------------------------------------------------------
# parent-to-child transfer


@lru_cache(maxsize=None)
def _embedding_matrices(p: int, dim: int) -> tuple:
    """Per child position, parent shape values at the child's nodes.

    Child ``c`` of the 2^dim subdivision covers the parent reference box
    with corner offsets ``o_k = (c >> k) & 1``; its node ξ sits at parent
    coordinate (ξ + o)/2.
    """
    nodes = node_coordinates(p, dim)
    out = []
    for c in range(2 ** dim):
        offset = np.array([(c >> k) & 1 for k in range(dim)], dtype=float)
        out.append(shape_values(p, dim, (nodes + offset) / 2.0))
    return tuple(out)


def embed_to_children(field: FEField, fine_mesh: Mesh,
                      registry: ManifoldRegistry) -> FEField:
    """Transfer ``field`` to the uniformly refined ``fine_mesh``.

    Child coefficients are the parent polynomial evaluated at the child
    nodes *in reference coordinates* — the geometry oracles are not
    consulted for the values.  The child nodes themselves (the new
    field's ``node_coords``) are placed through the oracles, so on a
    curved mesh the transferred field represents the parent polynomial
    on a geometry it was not interpolated on; quantifying that mismatch
    is this function's purpose.
    """
    p = field.degree
    dim = field.mesh.dim
    fine = build_field(fine_mesh, registry, p)
    pos = {ci: k for k, ci in enumerate(fine.active_ids)}
    E = _embedding_matrices(p, dim)

    coeff = np.full(fine.n_dofs, np.nan)
    for k, ci in enumerate(field.active_ids):
        children = fine_mesh.cells[ci].children
        if not children:
            raise NoChildren(
                f"cell {ci} of the coarse field has no children in the "
                "refined mesh; embed_to_children requires one uniform "
                "isotropic refinement"
            )
        if len(children) != 2 ** dim:
            raise NoChildren(
                f"cell {ci} was split anisotropically; embed_to_children "
                "requires one uniform isotropic refinement"
            )
        local = field.coefficients[field.cell_nodes[k]]
        for c, child in enumerate(children):
            vals = E[c] @ local
            rows = fine.cell_nodes[pos[child]]
            fresh = np.isnan(coeff[rows])
            coeff[rows[fresh]] = vals[fresh]
    if np.any(np.isnan(coeff)):
        raise NoChildren(
            "refined mesh has active cells that are not children of the "
            "coarse field's cells"
        )
    return replace(fine, coefficients=coeff)


# ---------------------------------------------------------------------------
# the degradation experiment


def default_test_function(X: np.ndarray) -> np.ndarray:
    """Smooth, non-polynomial, anisotropic; fixed for reproducibility.

    Absolute error values depend on this choice — only convergence
    orders and the coarse/transferred contrast are meaningful.
    """
    X = np.atleast_2d(X)
    return np.exp(X[:, 0]) * np.sin(X[:, 1] + 2.0 * X[:, 2])


SPHERE_MANIFOLD_ID = 7


def spherical_shell_setup(curved: bool = True,
                          r_inner: float = 0.5, r_outer: float = 1.0):
    """Six-cell spherical shell plus its registry.

    With ``curved`` every cell, face and edge follows the spherical
    average oracle; otherwise the same mesh refines by straight
    midpoints (the flat control).
    """
    mesh = shell_mesh(r_inner, r_outer)
    registry = ManifoldRegistry()
    if curved:
        registry.register(SPHERE_MANIFOLD_ID,
                          SphericalAverageManifold(center=(0.0, 0.0, 0.0)))
        mesh.set_all_cell_manifolds(SPHERE_MANIFOLD_ID)
        mesh.set_boundary_manifold(SPHERE_MANIFOLD_ID)
        for i in mesh.active_cells():
            for e in mesh.cell_edges(i):
                mesh.set_edge_manifold(e, SPHERE_MANIFOLD_ID)
            for fc in mesh.cell_faces(i):
                mesh.set_face_manifold(fc, SPHERE_MANIFOLD_ID)
    return mesh, registry


def table1_experiment(p: int, cycles: int, curved: bool = True,
                      q: int = None, f=default_test_function) -> list:
    """Interpolation error before and after one mesh transfer, per cycle.

    Each cycle interpolates ``f`` on the current spherical-shell mesh,
    measures the L2 error, refines uniformly, transfers the field via
    :func:`embed_to_children`, and measures the error of the transferred
    field on the refined geometry.  Returns rows
    ``(ndof, error_coarse, error_after_refine)``.

    The coarse error uses the subdivided rule so the flat control
    samples the very points the refined mesh integrates; on curved
    meshes the refined quadrature points move with the geometry and the
    transferred field loses one convergence order.
    """
    if not 1 <= p <= 7:
        raise ValueError(f"degree must be in 1..7, got {p}")
    if q is None:
        q = p + 1
    mesh, registry = spherical_shell_setup(curved)
    field = interpolate(mesh, registry, p, f)
    rows = []
    for _ in range(cycles):
        e_coarse = l2_error(field, f, q, subdivide=True)
        fine_mesh = refine_uniform(mesh, registry)
        transferred = embed_to_children(field, fine_mesh, registry)
        e_after = l2_error(transferred, f, q)
        rows.append((field.n_dofs, e_coarse, e_after))
        mesh = fine_mesh
        field = replace(transferred,
                        coefficients=_sample(f, transferred.node_coords))
    return rows
