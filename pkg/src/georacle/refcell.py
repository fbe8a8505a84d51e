"""Reference-cell conventions for quadrilaterals and hexahedra.

Vertices of the unit cell [0,1]^dim are numbered lexicographically with
the first coordinate running fastest::

    2D: 0=(0,0) 1=(1,0) 2=(0,1) 3=(1,1)
    3D: 0=(0,0,0) 1=(1,0,0) 2=(0,1,0) 3=(1,1,0)
        4=(0,0,1) 5=(1,0,1) 6=(0,1,1) 7=(1,1,1)

so bit k of a vertex number is its coordinate along axis k.  Edges are
grouped by the axis they run along; faces by the axis they are
perpendicular to (low side before high side).  Every module that talks
about cell entities imports these tables so entity numbering never has
to be translated.
"""

from __future__ import annotations

import numpy as np


def _vertex_coords(dim: int) -> np.ndarray:
    v = np.arange(2**dim)
    return ((v[:, None] >> np.arange(dim)) & 1).astype(float)


#: vertex -> reference coordinates
VERTEX_COORDS = {2: _vertex_coords(2), 3: _vertex_coords(3)}

#: edge -> (vertex, vertex); the edge runs along EDGE_AXIS[edge]
EDGES = {
    2: ((0, 1), (2, 3), (0, 2), (1, 3)),
    3: (
        (0, 1), (2, 3), (4, 5), (6, 7),   # along x
        (0, 2), (1, 3), (4, 6), (5, 7),   # along y
        (0, 4), (1, 5), (2, 6), (3, 7),   # along z
    ),
}

EDGE_AXIS = {
    2: (0, 0, 1, 1),
    3: (0, 0, 0, 0, 1, 1, 1, 1, 2, 2, 2, 2),
}

#: face -> 4 vertices in the face's own lexicographic order; face 2k is
#: the low side perpendicular to axis k, face 2k+1 the high side
FACES_3D = (
    (0, 2, 4, 6),  # x = 0, parameterized by (y, z)
    (1, 3, 5, 7),  # x = 1
    (0, 1, 4, 5),  # y = 0, parameterized by (x, z)
    (2, 3, 6, 7),  # y = 1
    (0, 1, 2, 3),  # z = 0, parameterized by (x, y)
    (4, 5, 6, 7),  # z = 1
)

#: face -> the two reference axes spanning it, in parameter order
FACE_AXES_3D = ((1, 2), (1, 2), (0, 2), (0, 2), (0, 1), (0, 1))

#: a quad's "faces" are its edges; this maps face number (2 sides per
#: axis, low before high: left, right, bottom, top) to edge number
FACE_TO_EDGE_2D = (2, 3, 0, 1)

_EDGE_LOOKUP = {
    dim: {frozenset(pair): e for e, pair in enumerate(EDGES[dim])}
    for dim in (2, 3)
}


def edge_index(dim: int, v0: int, v1: int) -> int:
    """Edge number joining two vertices of the reference cell."""
    return _EDGE_LOOKUP[dim][frozenset((v0, v1))]


#: face -> its 4 edges in (low v, high v, low u, high u) order, i.e. the
#: same layout a 2D cell uses for its own edges
FACE_EDGES_3D = tuple(
    (
        edge_index(3, f[0], f[1]),
        edge_index(3, f[2], f[3]),
        edge_index(3, f[0], f[2]),
        edge_index(3, f[1], f[3]),
    )
    for f in FACES_3D
)


def vertex_weights(xhat) -> np.ndarray:
    """Multilinear (bilinear/trilinear) vertex weights at a reference point."""
    xhat = np.asarray(xhat, dtype=float)
    dim = len(xhat)
    w = np.ones(2**dim)
    for v in range(2**dim):
        for k in range(dim):
            w[v] *= xhat[k] if (v >> k) & 1 else 1.0 - xhat[k]
    return w
