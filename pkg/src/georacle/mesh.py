"""Hierarchical quad/hex meshes with per-entity geometry oracles.

A mesh is a forest of cells: coarse cells plus the refinement tree
below them.  Leaf ("active") cells form the current computational mesh.
Every entity — cell, face, edge — may carry a manifold id; vertex
placement during refinement asks the *entity's* oracle first and falls
back to the enclosing cell's oracle, so a boundary arc stays an arc no
matter how the interior is described.

New vertices are placed exclusively through ``new_point`` queries:

* edge midpoints with weights (1/2, 1/2),
* quad centers from the 4 corners (weight -1/4 each) and 4 edge
  midpoints (weight 1/2 each),
* hex centers from 8 corners (1/8), 12 edge midpoints (-1/4) and
  6 face centers (1/2).

Each weight set sums to one, so the rules are plain oracle queries.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field, replace

import numpy as np

from .core import FlatManifold, Manifold
from .errors import GeometryError, InvertedChild, NotASurfaceMesh
from .refcell import EDGES, FACES_3D, VERTEX_COORDS, edge_index

#: manifold id meaning "no explicit geometry; flat"
FLAT_ID = -1

#: refinement flag values
NO_REFINE = "none"
ISOTROPIC = "isotropic"


class ManifoldRegistry:
    """Total map from manifold ids to oracles (unknown ids are flat)."""

    def __init__(self):
        self._oracles: dict[int, Manifold] = {}
        self._flat = FlatManifold()

    def register(self, manifold_id: int, oracle: Manifold) -> None:
        if manifold_id == FLAT_ID:
            raise ValueError(f"manifold id {FLAT_ID} is reserved for flat space")
        self._oracles[int(manifold_id)] = oracle

    def resolve(self, manifold_id: int) -> Manifold:
        return self._oracles.get(int(manifold_id), self._flat)

    def ids(self):
        return sorted(self._oracles)


@dataclass(frozen=True)
class Cell:
    """One cell of the refinement forest (a leaf if ``children`` is empty)."""

    vertices: tuple
    manifold_id: int = FLAT_ID
    level: int = 0
    parent: int = -1
    children: tuple = ()

    @property
    def active(self) -> bool:
        return not self.children


@dataclass
class RefinementFlags:
    """Per-cell refinement requests, indexed by *active-cell position*.

    ``axis`` entries request an anisotropic cut along that reference
    axis; ``None`` with ``kind`` ISOTROPIC is the regular 2^dim split.
    """

    kinds: list
    axes: list

    @classmethod
    def none(cls, n: int) -> "RefinementFlags":
        return cls(kinds=[NO_REFINE] * n, axes=[None] * n)

    @classmethod
    def all_isotropic(cls, n: int) -> "RefinementFlags":
        return cls(kinds=[ISOTROPIC] * n, axes=[None] * n)

    def mark_isotropic(self, i: int) -> None:
        self.kinds[i] = ISOTROPIC
        self.axes[i] = None

    def mark_anisotropic(self, i: int, axis: int) -> None:
        self.kinds[i] = "anisotropic"
        self.axes[i] = int(axis)

    def __len__(self) -> int:
        return len(self.kinds)


def _edge_key(a: int, b: int) -> tuple:
    return (a, b) if a < b else (b, a)


def _face_key(vs) -> tuple:
    return tuple(sorted(vs))


class Mesh:
    """Quad (dim 2) or hex (dim 3) mesh embedded in ``spacedim`` space."""

    def __init__(self, vertices, cells, manifold_ids=None):
        self.vertices = np.asarray(vertices, dtype=float).copy()
        if self.vertices.ndim != 2:
            raise ValueError("vertices must be an (n, spacedim) array")
        self.spacedim = self.vertices.shape[1]
        first = cells[0]
        n = len(first if isinstance(first, (tuple, list)) else first.vertices)
        if n == 4:
            self.dim = 2
        elif n == 8:
            self.dim = 3
        else:
            raise ValueError("cells must have 4 (quad) or 8 (hex) vertices")
        if self.dim > self.spacedim:
            raise ValueError("cell dimension exceeds space dimension")

        self.cells: list = []
        for i, c in enumerate(cells):
            if isinstance(c, Cell):
                self.cells.append(c)
            else:
                mid = FLAT_ID if manifold_ids is None else int(manifold_ids[i])
                self.cells.append(Cell(vertices=tuple(int(v) for v in c),
                                       manifold_id=mid))
        #: explicit per-entity manifold ids, keyed by sorted vertex tuples
        self.edge_manifold: dict = {}
        self.face_manifold: dict = {}
        #: midpoint registry: entity key -> the vertex at its center
        self.entity_vertex: dict = {}
        #: hanging vertices: vertex index -> the coarse entity it sits on
        self.hanging: dict = {}
        # lazy lookup caches (owner maps depend only on cell activity,
        # which never changes in place; the edge->face index follows the
        # face_manifold dict and is dropped whenever that mutates)
        self._edge_owner_cache = None
        self._face_owner_cache = None
        self._edge_face_mid_cache = None

    # -- basic queries -----------------------------------------------------

    def active_cells(self) -> list:
        return [i for i, c in enumerate(self.cells) if c.active]

    @property
    def n_active(self) -> int:
        return sum(1 for c in self.cells if c.active)

    def cell_vertices(self, i: int) -> np.ndarray:
        return self.vertices[list(self.cells[i].vertices)]

    def cell_diameter(self, i: int) -> float:
        v = self.cell_vertices(i)
        return float(max(np.linalg.norm(a - b) for a in v for b in v))

    def cell_edges(self, i: int) -> list:
        vs = self.cells[i].vertices
        return [_edge_key(vs[a], vs[b]) for a, b in EDGES[self.dim]]

    def cell_faces(self, i: int) -> list:
        if self.dim != 3:
            raise ValueError("faces as 4-vertex entities exist only for hexes")
        vs = self.cells[i].vertices
        return [_face_key([vs[k] for k in f]) for f in FACES_3D]

    def boundary_edges(self) -> list:
        """Edges used by exactly one active cell."""
        count: dict = {}
        for i in self.active_cells():
            for key in self.cell_edges(i):
                count[key] = count.get(key, 0) + 1
        return [k for k, c in count.items() if c == 1]

    def boundary_faces(self) -> list:
        count: dict = {}
        for i in self.active_cells():
            for key in self.cell_faces(i):
                count[key] = count.get(key, 0) + 1
        return [k for k, c in count.items() if c == 1]

    # -- manifold assignment ----------------------------------------------

    def set_cell_manifold(self, i: int, manifold_id: int) -> None:
        self.cells[i] = replace(self.cells[i], manifold_id=int(manifold_id))

    def set_all_cell_manifolds(self, manifold_id: int) -> None:
        for i in range(len(self.cells)):
            self.set_cell_manifold(i, manifold_id)

    def set_edge_manifold(self, edge, manifold_id: int) -> None:
        self.edge_manifold[_edge_key(*edge)] = int(manifold_id)

    def set_face_manifold(self, face, manifold_id: int) -> None:
        self.face_manifold[_face_key(face)] = int(manifold_id)
        self._edge_face_mid_cache = None

    def set_boundary_manifold(self, manifold_id: int) -> None:
        """Attach an oracle to every current boundary edge (and face in 3D)."""
        if self.dim == 3:
            bfaces = set(self.boundary_faces())
            for key in bfaces:
                self.face_manifold[key] = int(manifold_id)
            for i in self.active_cells():
                vs = self.cells[i].vertices
                for f, fverts in enumerate(FACES_3D):
                    if _face_key([vs[k] for k in fverts]) in bfaces:
                        for a, b in ((fverts[0], fverts[1]), (fverts[2], fverts[3]),
                                     (fverts[0], fverts[2]), (fverts[1], fverts[3])):
                            self.edge_manifold[_edge_key(vs[a], vs[b])] = int(manifold_id)
        else:
            for key in self.boundary_edges():
                self.edge_manifold[key] = int(manifold_id)
        self._edge_face_mid_cache = None

    # -- entity -> governing oracle ---------------------------------------

    def _cell_of_edge(self) -> dict:
        if self._edge_owner_cache is None:
            owner: dict = {}
            for i in self.active_cells():
                for key in self.cell_edges(i):
                    if key not in owner or i < owner[key]:
                        owner[key] = i
            self._edge_owner_cache = owner
        return self._edge_owner_cache

    def _cell_of_face(self) -> dict:
        if self._face_owner_cache is None:
            owner: dict = {}
            for i in self.active_cells():
                for key in self.cell_faces(i):
                    if key not in owner or i < owner[key]:
                        owner[key] = i
            self._face_owner_cache = owner
        return self._face_owner_cache

    def _edge_face_mid(self) -> dict:
        """Edge key -> manifold id of the first (sorted) explicit face
        containing both endpoints."""
        if self._edge_face_mid_cache is None:
            index: dict = {}
            for fkey, fmid in sorted(self.face_manifold.items()):
                for pair in itertools.combinations(fkey, 2):
                    index.setdefault(pair, fmid)
            self._edge_face_mid_cache = index
        return self._edge_face_mid_cache

    def edge_manifold_id(self, key, owner_map=None) -> int:
        mid = self.edge_manifold.get(key)
        if mid is not None:
            return mid
        if self.dim == 3:
            # an edge may lie on an explicitly described face
            mid = self._edge_face_mid().get(key)
            if mid is not None:
                return mid
        owner_map = owner_map if owner_map is not None else self._cell_of_edge()
        owner = owner_map.get(key)
        return FLAT_ID if owner is None else self.cells[owner].manifold_id

    def face_manifold_id(self, key, owner_map=None) -> int:
        mid = self.face_manifold.get(key)
        if mid is not None:
            return mid
        owner_map = owner_map if owner_map is not None else self._cell_of_face()
        owner = owner_map.get(key)
        return FLAT_ID if owner is None else self.cells[owner].manifold_id

    # -- copying -----------------------------------------------------------

    def copy(self) -> "Mesh":
        m = Mesh.__new__(Mesh)
        m.vertices = self.vertices.copy()
        m.spacedim = self.spacedim
        m.dim = self.dim
        m.cells = list(self.cells)
        m.edge_manifold = dict(self.edge_manifold)
        m.face_manifold = dict(self.face_manifold)
        m.entity_vertex = dict(self.entity_vertex)
        m.hanging = dict(self.hanging)
        m._edge_owner_cache = None
        m._face_owner_cache = None
        m._edge_face_mid_cache = None
        return m


# ---------------------------------------------------------------------------
# refinement


def _queried(oracle: Manifold, pts, w, entity: str) -> np.ndarray:
    """One oracle query with the queried entity attached to failures."""
    try:
        return oracle.new_point(pts, w)
    except GeometryError as exc:
        raise type(exc)(f"{exc} [{entity}]") from exc


def _multilinear_corner_dets(verts: np.ndarray, dim: int) -> np.ndarray:
    """Determinant of the multilinear map's Jacobian at each corner."""
    dets = np.empty(2**dim)
    for ci, xhat in enumerate(VERTEX_COORDS[dim]):
        j = np.empty((verts.shape[1], dim))
        for k in range(dim):
            dw = np.zeros(2**dim)
            for v in range(2**dim):
                p = 1.0 if (v >> k) & 1 else -1.0
                for a in range(dim):
                    if a != k:
                        p *= xhat[a] if (v >> a) & 1 else 1.0 - xhat[a]
                dw[v] = p
            j[:, k] = dw @ verts
        dets[ci] = np.linalg.det(j)
    return dets


class _Refiner:
    """One refinement generation; collects new vertices deterministically."""

    def __init__(self, mesh: Mesh, registry: ManifoldRegistry):
        self.old = mesh
        self.new = mesh.copy()
        self.registry = registry
        self.edge_owner = mesh._cell_of_edge()
        self.face_owner = mesh._cell_of_face() if mesh.dim == 3 else {}
        self._vertex_lookup: dict = {}

    def _add_vertex(self, x: np.ndarray) -> int:
        self.new.vertices = np.vstack([self.new.vertices, x[None, :]])
        return len(self.new.vertices) - 1

    def edge_midpoint(self, key) -> int:
        m = self.new
        hit = m.entity_vertex.get(key)
        if hit is not None:
            return hit
        oracle = self.registry.resolve(m.edge_manifold_id(key, self.edge_owner))
        a, b = m.vertices[key[0]], m.vertices[key[1]]
        v = self._add_vertex(_queried(oracle, (a, b), (0.5, 0.5),
                                      f"edge {key}"))
        m.entity_vertex[key] = v
        # half edges inherit an explicit edge id
        mid = m.edge_manifold.get(key)
        if mid is not None:
            m.edge_manifold[_edge_key(key[0], v)] = mid
            m.edge_manifold[_edge_key(key[1], v)] = mid
        return v

    def face_center(self, key, corners, edge_mids) -> int:
        """Center of a quad face from its 4 corners and 4 edge midpoints."""
        m = self.new
        hit = m.entity_vertex.get(key)
        if hit is not None:
            return hit
        oracle = self.registry.resolve(m.face_manifold_id(key, self.face_owner))
        pts = np.vstack([m.vertices[list(corners)], m.vertices[list(edge_mids)]])
        w = np.array([-0.25] * 4 + [0.5] * 4)
        v = self._add_vertex(_queried(oracle, pts, w, f"face {key}"))
        m.entity_vertex[key] = v
        mid = m.face_manifold.get(key)
        if mid is not None:
            # quarter faces inherit an explicit face id (corner, two edge
            # midpoints, center), and so do the face-interior edges
            for c, (ea, eb) in zip(corners, ((0, 2), (0, 3), (1, 2), (1, 3))):
                m.face_manifold[_face_key((c, edge_mids[ea], edge_mids[eb], v))] = mid
            for em in edge_mids:
                m.edge_manifold[_edge_key(em, v)] = mid
        return v

    def quad_cell_center(self, cell_idx: int, corners, edge_mids) -> int:
        m = self.new
        oracle = self.registry.resolve(m.cells[cell_idx].manifold_id)
        pts = np.vstack([m.vertices[list(corners)], m.vertices[list(edge_mids)]])
        w = np.array([-0.25] * 4 + [0.5] * 4)
        return self._add_vertex(_queried(oracle, pts, w, f"cell {cell_idx}"))

    def hex_cell_center(self, cell_idx: int, corners, edge_mids, face_centers) -> int:
        m = self.new
        oracle = self.registry.resolve(m.cells[cell_idx].manifold_id)
        pts = np.vstack([
            m.vertices[list(corners)],
            m.vertices[list(edge_mids)],
            m.vertices[list(face_centers)],
        ])
        w = np.array([0.125] * 8 + [-0.25] * 12 + [0.5] * 6)
        return self._add_vertex(_queried(oracle, pts, w, f"cell {cell_idx}"))

    # -- cell splitting ----------------------------------------------------

    def split_quad(self, i: int) -> None:
        m = self.new
        cell = m.cells[i]
        vs = cell.vertices
        mids = [self.edge_midpoint(_edge_key(vs[a], vs[b])) for a, b in EDGES[2]]
        center = self.quad_cell_center(i, vs, mids)
        mb, mt, ml, mr = mids
        lattice = {
            (0, 0): vs[0], (2, 0): vs[1], (0, 2): vs[2], (2, 2): vs[3],
            (1, 0): mb, (1, 2): mt, (0, 1): ml, (2, 1): mr, (1, 1): center,
        }
        children = []
        for oy in (0, 1):
            for ox in (0, 1):
                children.append((
                    lattice[(ox, oy)], lattice[(ox + 1, oy)],
                    lattice[(ox, oy + 1)], lattice[(ox + 1, oy + 1)],
                ))
        self._attach_children(i, children)

    def split_quad_aniso(self, i: int, axis: int) -> None:
        m = self.new
        cell = m.cells[i]
        vs = cell.vertices
        if axis == 0:
            ma = self.edge_midpoint(_edge_key(vs[0], vs[1]))
            mb = self.edge_midpoint(_edge_key(vs[2], vs[3]))
            children = [(vs[0], ma, vs[2], mb), (ma, vs[1], mb, vs[3])]
        else:
            ma = self.edge_midpoint(_edge_key(vs[0], vs[2]))
            mb = self.edge_midpoint(_edge_key(vs[1], vs[3]))
            children = [(vs[0], vs[1], ma, mb), (ma, mb, vs[2], vs[3])]
        self._attach_children(i, children)

    def split_hex(self, i: int) -> None:
        m = self.new
        cell = m.cells[i]
        vs = cell.vertices
        edge_mids = [self.edge_midpoint(_edge_key(vs[a], vs[b]))
                     for a, b in EDGES[3]]
        face_centers = []
        for f, fverts in enumerate(FACES_3D):
            corners = tuple(vs[k] for k in fverts)
            fkey = _face_key(corners)
            fmids = (
                edge_mids[_hex_edge_index(fverts[0], fverts[1])],
                edge_mids[_hex_edge_index(fverts[2], fverts[3])],
                edge_mids[_hex_edge_index(fverts[0], fverts[2])],
                edge_mids[_hex_edge_index(fverts[1], fverts[3])],
            )
            face_centers.append(self.face_center(fkey, corners, fmids))
        center = self.hex_cell_center(i, vs, edge_mids, face_centers)

        lattice: dict = {}
        for v, coords in enumerate(VERTEX_COORDS[3]):
            lattice[tuple((2 * coords).astype(int))] = vs[v]
        for e, (a, b) in enumerate(EDGES[3]):
            ca = VERTEX_COORDS[3][a]
            cb = VERTEX_COORDS[3][b]
            lattice[tuple((ca + cb).astype(int))] = edge_mids[e]
        for f, fverts in enumerate(FACES_3D):
            cc = VERTEX_COORDS[3][list(fverts)].mean(axis=0)
            lattice[tuple((2 * cc).astype(int))] = face_centers[f]
        lattice[(1, 1, 1)] = center

        children = []
        for oz in (0, 1):
            for oy in (0, 1):
                for ox in (0, 1):
                    children.append(tuple(
                        lattice[(ox + int(c[0]), oy + int(c[1]), oz + int(c[2]))]
                        for c in VERTEX_COORDS[3]
                    ))
        self._attach_children(i, children)

    def _attach_children(self, i: int, child_vertex_lists) -> None:
        m = self.new
        parent = m.cells[i]
        if m.dim == m.spacedim:
            for cv in child_vertex_lists:
                dets = _multilinear_corner_dets(m.vertices[list(cv)], m.dim)
                if np.any(dets <= 0.0):
                    raise InvertedChild(
                        f"refining cell {i} produces a child with non-positive "
                        f"corner Jacobian determinant (min {dets.min():.3e}); "
                        "the mesh no longer matches its geometry description"
                    )
        child_ids = []
        for cv in child_vertex_lists:
            child_ids.append(len(m.cells))
            m.cells.append(Cell(
                vertices=tuple(cv),
                manifold_id=parent.manifold_id,
                level=parent.level + 1,
                parent=i,
            ))
        m.cells[i] = replace(parent, children=tuple(child_ids))


def _hex_edge_index(a: int, b: int) -> int:
    return edge_index(3, a, b)


def refine(mesh: Mesh, flags: RefinementFlags, registry: ManifoldRegistry) -> Mesh:
    """Split flagged active cells; returns a new mesh, input untouched."""
    active = mesh.active_cells()
    if len(flags) != len(active):
        raise ValueError(
            f"{len(flags)} flags for {len(active)} active cells"
        )
    r = _Refiner(mesh, registry)
    for pos, i in enumerate(active):
        kind = flags.kinds[pos]
        if kind == NO_REFINE:
            continue
        if kind == ISOTROPIC:
            if mesh.dim == 2:
                r.split_quad(i)
            else:
                r.split_hex(i)
        else:
            if mesh.dim != 2:
                raise ValueError("anisotropic refinement exists for quads only")
            r.split_quad_aniso(i, flags.axes[pos])
    out = r.new
    out._edge_owner_cache = None
    out._face_owner_cache = None
    out._edge_face_mid_cache = None
    _record_hanging_vertices(out)
    return out


def refine_uniform(mesh: Mesh, registry: ManifoldRegistry) -> Mesh:
    return refine(mesh, RefinementFlags.all_isotropic(mesh.n_active), registry)


def _record_hanging_vertices(mesh: Mesh) -> None:
    """A midpoint is hanging while some active cell spans its parent edge."""
    active_edges = set()
    for i in mesh.active_cells():
        active_edges.update(mesh.cell_edges(i))
    mesh.hanging = {}
    for key, v in mesh.entity_vertex.items():
        if len(key) == 2 and key in active_edges:
            mesh.hanging[v] = key


# ---------------------------------------------------------------------------
# surface-mesh curvature indicator


def _bilinear_normal(verts: np.ndarray, xhat) -> np.ndarray:
    """Unit normal of a bilinear surface patch at reference coordinates."""
    j = np.empty((3, 2))
    for k in range(2):
        dw = np.zeros(4)
        for v in range(4):
            p = 1.0 if (v >> k) & 1 else -1.0
            a = 1 - k
            p *= xhat[a] if (v >> a) & 1 else 1.0 - xhat[a]
            dw[v] = p
        j[:, k] = dw @ verts
    n = np.cross(j[:, 0], j[:, 1])
    return n / np.linalg.norm(n)


#: local edge -> reference coordinates of the point at edge parameter t
_EDGE_REF = {
    0: lambda t: (t, 0.0),
    1: lambda t: (t, 1.0),
    2: lambda t: (0.0, t),
    3: lambda t: (1.0, t),
}


def curvature_indicator(mesh: Mesh) -> np.ndarray:
    """Per-active-cell indicator from normal-vector jumps across edges.

    eta_K = sqrt(h/24 * sum_edges integral of |n_K - n_neighbor|^2), the
    edge integrals taken with a two-point midpoint rule.  Edges shared
    with finer neighbors are descended so each leaf piece is compared
    against the right neighbor cell.
    """
    if mesh.dim != mesh.spacedim - 1:
        raise NotASurfaceMesh(
            f"curvature indicator needs dim = spacedim - 1, got "
            f"{mesh.dim} in {mesh.spacedim}d space"
        )
    active = mesh.active_cells()
    pos_of = {i: p for p, i in enumerate(active)}
    edge_users: dict = {}
    for i in active:
        vs = mesh.cells[i].vertices
        for le, (a, b) in enumerate(EDGES[2]):
            edge_users.setdefault(_edge_key(vs[a], vs[b]), []).append((i, le))

    eta2 = np.zeros(len(active))
    for i in active:
        vs = mesh.cells[i].vertices
        verts = mesh.cell_vertices(i)
        h = mesh.cell_diameter(i)
        total = 0.0
        for le, (a, b) in enumerate(EDGES[2]):
            key = _edge_key(vs[a], vs[b])
            # finest pieces of this edge used by other active cells; the
            # parameter t runs from vs[a] to vs[b]
            pieces: list = []
            _collect_pieces(mesh, edge_users, key, (vs[a], vs[b]), 0.0, 1.0,
                            pieces, exclude=i)
            for lo, hi, nb_cell, sub in pieces:
                plen = (np.linalg.norm(mesh.vertices[vs[b]]
                                       - mesh.vertices[vs[a]]) * (hi - lo))
                nverts = mesh.cell_vertices(nb_cell)
                nle, forward = _local_edge(mesh.cells[nb_cell].vertices, sub)
                for t in (lo + 0.25 * (hi - lo), lo + 0.75 * (hi - lo)):
                    n_self = _bilinear_normal(verts, _EDGE_REF[le](t))
                    tf = (t - lo) / (hi - lo)
                    n_nb = _bilinear_normal(
                        nverts, _EDGE_REF[nle](tf if forward else 1.0 - tf))
                    jump = n_self - n_nb
                    total += float(jump @ jump) * 0.5 * plen
        eta2[pos_of[i]] = h / 24.0 * total
    return np.sqrt(eta2)


def _local_edge(cell_vertices, oriented):
    """Local edge index of ``oriented`` and whether directions agree."""
    a, b = oriented
    for le, (p, q) in enumerate(EDGES[2]):
        if cell_vertices[p] == a and cell_vertices[q] == b:
            return le, True
        if cell_vertices[p] == b and cell_vertices[q] == a:
            return le, False
    raise ValueError("edge does not belong to the cell")


def _collect_pieces(mesh, edge_users, key, oriented, t0, t1, out, exclude):
    """Leaf sub-edges of ``key`` used by active cells other than ``exclude``.

    ``oriented`` carries (start-vertex, end-vertex) so parameters stay in
    the orientation of the querying cell's edge.
    """
    users = [c for c, _ in edge_users.get(key, []) if c != exclude]
    if users:
        out.append((t0, t1, min(users), oriented))
        return
    mid = mesh.entity_vertex.get(key)
    if mid is None:
        return
    a, b = oriented
    tm = 0.5 * (t0 + t1)
    _collect_pieces(mesh, edge_users, _edge_key(a, mid), (a, mid), t0, tm,
                    out, exclude)
    _collect_pieces(mesh, edge_users, _edge_key(mid, b), (mid, b), tm, t1,
                    out, exclude)


# ---------------------------------------------------------------------------
# marking


def mark_fraction(indicators, fraction: float,
                  tie_rel: float = 0.0) -> RefinementFlags:
    """Flag the cells with the largest indicators (ties to lower index).

    With ``tie_rel`` every cell whose indicator comes within that
    relative distance of the smallest *selected* indicator is flagged
    too, so an equivalence class of equally refinable cells (symmetric
    meshes produce them structurally) is never split by the cutoff.
    """
    if not 0.0 < fraction <= 1.0:
        raise ValueError(f"fraction must lie in (0, 1], got {fraction}")
    ind = np.asarray(indicators, dtype=float)
    n = len(ind)
    k = max(1, int(np.floor(fraction * n + 1.0e-12)))
    order = np.argsort(-ind, kind="stable")  # descending, stable => index ties
    flags = RefinementFlags.none(n)
    for i in order[:k]:
        flags.mark_isotropic(int(i))
    if tie_rel > 0.0:
        cutoff = ind[order[k - 1]] * (1.0 - tie_rel)
        for i in order[k:]:
            if ind[i] < cutoff:
                break
            flags.mark_isotropic(int(i))
    return flags


def aspect_ratio_flags(mesh: Mesh, registry: ManifoldRegistry,
                       lambda_max: float) -> RefinementFlags:
    """Flag quads whose axis-length ratio strictly exceeds ``lambda_max``.

    Edge lengths are measured through the oracle: twice the norm of the
    tangent vector from the edge midpoint toward an endpoint.
    """
    if lambda_max <= 1.0:
        raise ValueError(f"lambda_max must exceed 1, got {lambda_max}")
    if mesh.dim != 2:
        raise ValueError("aspect-ratio refinement exists for quads only")
    active = mesh.active_cells()
    flags = RefinementFlags.none(len(active))
    edge_owner = mesh._cell_of_edge()
    for pos, i in enumerate(active):
        vs = mesh.cells[i].vertices
        lengths = np.empty(4)
        for le, (a, b) in enumerate(EDGES[2]):
            key = _edge_key(vs[a], vs[b])
            oracle = registry.resolve(mesh.edge_manifold_id(key, edge_owner))
            pa, pb = mesh.vertices[vs[a]], mesh.vertices[vs[b]]
            midp = oracle.new_point((pa, pb), (0.5, 0.5))
            lengths[le] = 2.0 * float(np.linalg.norm(oracle.tangent_vector(midp, pb)))
        lx = 0.5 * (lengths[0] + lengths[1])
        ly = 0.5 * (lengths[2] + lengths[3])
        ratio = max(lx, ly) / min(lx, ly)
        if ratio > lambda_max:
            flags.mark_anisotropic(pos, 0 if lx > ly else 1)
    return flags


# ---------------------------------------------------------------------------
# coarse-mesh builders


def unit_square_mesh() -> Mesh:
    return Mesh(VERTEX_COORDS[2], [(0, 1, 2, 3)])


def annulus_mesh(n_sectors: int = 10, r_inner: float = 0.5,
                 r_outer: float = 1.0) -> Mesh:
    """Full annulus out of ``n_sectors`` quads (reference x = radial)."""
    if n_sectors < 3:
        raise ValueError("an annulus needs at least 3 sectors")
    ang = 2.0 * np.pi * np.arange(n_sectors) / n_sectors
    inner = np.column_stack([r_inner * np.cos(ang), r_inner * np.sin(ang)])
    outer = np.column_stack([r_outer * np.cos(ang), r_outer * np.sin(ang)])
    verts = np.vstack([inner, outer])
    cells = []
    for k in range(n_sectors):
        kn = (k + 1) % n_sectors
        cells.append((k, n_sectors + k, kn, n_sectors + kn))
    return Mesh(verts, cells)


def quarter_annulus_mesh(r_inner: float = 0.5, r_outer: float = 1.0) -> Mesh:
    """One quad covering r ∈ [r_inner, r_outer], θ ∈ [0, π/2] (x = radial)."""
    verts = np.array([
        [r_inner, 0.0],
        [r_outer, 0.0],
        [0.0, r_inner],
        [0.0, r_outer],
    ])
    return Mesh(verts, [(0, 1, 2, 3)])


_CUBE_FACE_AXES = (
    # (outward axis, sign, (u axis, v axis)) chosen so u x v points outward
    (0, +1, (1, 2)),
    (0, -1, (2, 1)),
    (1, +1, (2, 0)),
    (1, -1, (0, 2)),
    (2, +1, (0, 1)),
    (2, -1, (1, 0)),
)


def _cube_corner_grid():
    """Vertex index lookup for the 8 cube corners at (+-1, +-1, +-1)."""
    corners = []
    lookup = {}
    for v, c in enumerate(VERTEX_COORDS[3]):
        p = 2.0 * c - 1.0
        corners.append(p)
        lookup[tuple(int(round(x)) for x in p)] = v
    return np.array(corners), lookup


def cube_surface_mesh(radius: float = 1.0) -> Mesh:
    """Six outward-oriented quads: a cube inscribed in a sphere."""
    corners, lookup = _cube_corner_grid()
    verts = radius * corners / np.sqrt(3.0)
    cells = []
    for axis, sign, (ua, va) in _CUBE_FACE_AXES:
        cell = []
        for vv in (0, 1):
            for uu in (0, 1):
                p = [0, 0, 0]
                p[axis] = sign
                p[ua] = 2 * uu - 1
                p[va] = 2 * vv - 1
                cell.append(lookup[tuple(p)])
        cells.append(tuple(cell))
    return Mesh(verts, cells)


def shell_mesh(r_inner: float = 0.5, r_outer: float = 1.0) -> Mesh:
    """Six-cell hexahedral shell between two spheres (reference z = radial)."""
    corners, lookup = _cube_corner_grid()
    inner = r_inner * corners / np.sqrt(3.0)
    outer = r_outer * corners / np.sqrt(3.0)
    verts = np.vstack([inner, outer])
    cells = []
    for axis, sign, (ua, va) in _CUBE_FACE_AXES:
        layer = []
        for vv in (0, 1):
            for uu in (0, 1):
                p = [0, 0, 0]
                p[axis] = sign
                p[ua] = 2 * uu - 1
                p[va] = 2 * vv - 1
                layer.append(lookup[tuple(p)])
        cells.append(tuple(layer) + tuple(8 + v for v in layer))
    return Mesh(verts, cells)
