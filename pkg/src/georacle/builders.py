"""Constructors for the synthetic geometries used by tests and the CLI.

Coarse meshes live here as well (see the mesh module for the Mesh type
itself); everything is deterministic so repeated runs produce identical
vertex orders.
"""

from __future__ import annotations

import math

import numpy as np

from .trisurface import TriSurface


def icosphere(subdivisions: int = 3, radius: float = 1.0, center=(0.0, 0.0, 0.0)) -> TriSurface:
    """Geodesic sphere obtained by subdividing an icosahedron.

    Each subdivision splits every triangle in four and projects the new
    midpoints onto the sphere; ``subdivisions=3`` gives the familiar
    1280-triangle sphere.
    """
    phi = (1.0 + math.sqrt(5.0)) / 2.0
    verts = np.array([
        [-1, phi, 0], [1, phi, 0], [-1, -phi, 0], [1, -phi, 0],
        [0, -1, phi], [0, 1, phi], [0, -1, -phi], [0, 1, -phi],
        [phi, 0, -1], [phi, 0, 1], [-phi, 0, -1], [-phi, 0, 1],
    ], dtype=float)
    verts /= np.linalg.norm(verts[0])
    tris = [
        (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
        (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
        (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
        (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
    ]
    verts = [v for v in verts]

    for _ in range(subdivisions):
        midpoint: dict[tuple[int, int], int] = {}

        def mid(a: int, b: int) -> int:
            key = (a, b) if a < b else (b, a)
            idx = midpoint.get(key)
            if idx is None:
                m = verts[a] + verts[b]
                m /= np.linalg.norm(m)
                idx = len(verts)
                verts.append(m)
                midpoint[key] = idx
            return idx

        nxt = []
        for a, b, c in tris:
            ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
            nxt += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        tris = nxt

    v = np.array(verts) * radius + np.asarray(center, dtype=float)
    return TriSurface(v, np.array(tris, dtype=np.int64))


def uv_sphere(n_lon: int = 100, n_lat: int = 52, radius: float = 1.0,
              center=(0.0, 0.0, 0.0)) -> TriSurface:
    """Latitude/longitude sphere with ``2 * n_lon * (n_lat - 2)`` triangles."""
    verts = [np.array([0.0, 0.0, radius])]
    for i in range(1, n_lat - 1):
        theta = math.pi * i / (n_lat - 1)
        for j in range(n_lon):
            phi = 2.0 * math.pi * j / n_lon
            verts.append(radius * np.array([
                math.sin(theta) * math.cos(phi),
                math.sin(theta) * math.sin(phi),
                math.cos(theta),
            ]))
    verts.append(np.array([0.0, 0.0, -radius]))
    south = len(verts) - 1

    def ring(i, j):
        return 1 + (i - 1) * n_lon + (j % n_lon)

    tris = []
    for j in range(n_lon):
        tris.append((0, ring(1, j), ring(1, j + 1)))
    for i in range(1, n_lat - 2):
        for j in range(n_lon):
            a, b = ring(i, j), ring(i, j + 1)
            c, d = ring(i + 1, j), ring(i + 1, j + 1)
            tris.append((a, c, b))
            tris.append((b, c, d))
    for j in range(n_lon):
        tris.append((south, ring(n_lat - 2, j + 1), ring(n_lat - 2, j)))

    v = np.array(verts) + np.asarray(center, dtype=float)
    return TriSurface(v, np.array(tris, dtype=np.int64))
