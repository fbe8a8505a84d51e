"""Mesh serialization: a native JSON format plus a legacy VTK writer.

Native format (version 1) — a single JSON document:

.. code-block:: json

    {
      "format": "georacle-mesh",
      "version": 1,
      "dim": 2,
      "spacedim": 2,
      "vertices": [[x, y], ...],
      "cells": [
        {"vertices": [0, 1, 2, 3], "manifold_id": -1, "level": 0,
         "parent": -1, "children": []},
        ...
      ],
      "edge_manifold": [[[a, b], id], ...],
      "face_manifold": [[[a, b, c, d], id], ...],
      "entity_vertex": [[[a, b], v], ...],
      "hanging": [[v, [a, b]], ...]
    }

``edge_manifold``/``face_manifold`` are the boundary-entity overrides
(entity vertex tuple -> manifold id); ``entity_vertex`` is the midpoint
registry that keeps refinement conforming across generations; keys are
sorted so identical meshes serialize to identical bytes.

The VTK writer emits legacy ASCII unstructured grids (cell type 9 for
quads, 12 for hexahedra) covering the active cells only, with the cell
level and manifold id attached as cell data.
"""

from __future__ import annotations

import json

import numpy as np

from .errors import ParseError
from .mesh import Cell, Mesh

FORMAT_NAME = "georacle-mesh"
FORMAT_VERSION = 1

#: lexicographic corner order -> VTK corner order
_VTK_QUAD = (0, 1, 3, 2)
_VTK_HEX = (0, 1, 3, 2, 4, 5, 7, 6)


def mesh_to_dict(mesh: Mesh) -> dict:
    return {
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        "dim": mesh.dim,
        "spacedim": mesh.spacedim,
        "vertices": [[float(x) for x in v] for v in mesh.vertices],
        "cells": [
            {
                "vertices": list(c.vertices),
                "manifold_id": c.manifold_id,
                "level": c.level,
                "parent": c.parent,
                "children": list(c.children),
            }
            for c in mesh.cells
        ],
        "edge_manifold": [[list(k), v]
                          for k, v in sorted(mesh.edge_manifold.items())],
        "face_manifold": [[list(k), v]
                          for k, v in sorted(mesh.face_manifold.items())],
        "entity_vertex": [[list(k), v]
                          for k, v in sorted(mesh.entity_vertex.items())],
        "hanging": [[v, list(k)] for v, k in sorted(mesh.hanging.items())],
    }


def mesh_from_dict(doc: dict) -> Mesh:
    if doc.get("format") != FORMAT_NAME:
        raise ParseError(f"not a {FORMAT_NAME} document")
    if doc.get("version") != FORMAT_VERSION:
        raise ParseError(f"unsupported mesh format version {doc.get('version')}")
    cells = [
        Cell(
            vertices=tuple(c["vertices"]),
            manifold_id=c["manifold_id"],
            level=c["level"],
            parent=c["parent"],
            children=tuple(c["children"]),
        )
        for c in doc["cells"]
    ]
    mesh = Mesh(np.array(doc["vertices"], dtype=float), cells)
    if mesh.dim != doc["dim"] or mesh.spacedim != doc["spacedim"]:
        raise ParseError("mesh dimensions do not match the declared header")
    mesh.edge_manifold = {tuple(k): v for k, v in doc["edge_manifold"]}
    mesh.face_manifold = {tuple(k): v for k, v in doc["face_manifold"]}
    mesh.entity_vertex = {tuple(k): v for k, v in doc["entity_vertex"]}
    mesh.hanging = {v: tuple(k) for v, k in doc["hanging"]}
    return mesh


def save_mesh(mesh: Mesh, path) -> None:
    text = json.dumps(mesh_to_dict(mesh), indent=1, sort_keys=True)
    with open(path, "w", newline="\n") as f:
        f.write(text)
        f.write("\n")


def load_mesh(path) -> Mesh:
    with open(path) as f:
        try:
            doc = json.load(f)
        except json.JSONDecodeError as e:
            raise ParseError(f"invalid mesh file {path}: {e}") from e
    return mesh_from_dict(doc)


def write_vtk(mesh: Mesh, path, title: str = "mesh") -> None:
    """Legacy ASCII VTK unstructured grid of the active cells."""
    active = mesh.active_cells()
    perm = _VTK_QUAD if mesh.dim == 2 else _VTK_HEX
    vtk_type = 9 if mesh.dim == 2 else 12
    npc = len(perm)
    lines = [
        "# vtk DataFile Version 3.0",
        title,
        "ASCII",
        "DATASET UNSTRUCTURED_GRID",
        f"POINTS {len(mesh.vertices)} double",
    ]
    for v in mesh.vertices:
        xyz = list(v) + [0.0] * (3 - mesh.spacedim)
        lines.append(" ".join(repr(float(x)) for x in xyz))
    lines.append(f"CELLS {len(active)} {len(active) * (npc + 1)}")
    for i in active:
        vs = mesh.cells[i].vertices
        lines.append(" ".join([str(npc)] + [str(vs[p]) for p in perm]))
    lines.append(f"CELL_TYPES {len(active)}")
    lines.extend(str(vtk_type) for _ in active)
    lines.append(f"CELL_DATA {len(active)}")
    lines.append("SCALARS level int 1")
    lines.append("LOOKUP_TABLE default")
    lines.extend(str(mesh.cells[i].level) for i in active)
    lines.append("SCALARS manifold_id int 1")
    lines.append("LOOKUP_TABLE default")
    lines.extend(str(mesh.cells[i].manifold_id) for i in active)
    with open(path, "w", newline="\n") as f:
        f.write("\n".join(lines))
        f.write("\n")


def read_vtk_header(path) -> dict:
    """Minimal legacy-VTK structural check used by golden-file tests.

    Parses the header, the point block, connectivity and cell types and
    returns their counts; raises ParseError on malformed files.
    """
    with open(path) as f:
        lines = [ln.rstrip("\n") for ln in f]
    if not lines or not lines[0].startswith("# vtk DataFile"):
        raise ParseError("missing VTK header line")
    if len(lines) < 5 or lines[2] != "ASCII":
        raise ParseError("only ASCII legacy VTK is understood")
    if lines[3] != "DATASET UNSTRUCTURED_GRID":
        raise ParseError("not an unstructured grid")
    tok = lines[4].split()
    if tok[0] != "POINTS":
        raise ParseError("missing POINTS block")
    n_points = int(tok[1])
    row = 5
    for i in range(n_points):
        if len(lines[row + i].split()) != 3:
            raise ParseError(f"point row {i} does not have 3 components")
    row += n_points
    tok = lines[row].split()
    if tok[0] != "CELLS":
        raise ParseError("missing CELLS block")
    n_cells, n_ints = int(tok[1]), int(tok[2])
    row += 1
    total = 0
    for i in range(n_cells):
        ints = [int(t) for t in lines[row + i].split()]
        if len(ints) != ints[0] + 1:
            raise ParseError(f"cell row {i} length mismatch")
        if any(v < 0 or v >= n_points for v in ints[1:]):
            raise ParseError(f"cell row {i} references a missing point")
        total += len(ints)
    if total != n_ints:
        raise ParseError("CELLS size field mismatch")
    row += n_cells
    tok = lines[row].split()
    if tok[0] != "CELL_TYPES" or int(tok[1]) != n_cells:
        raise ParseError("missing CELL_TYPES block")
    types = {int(lines[row + 1 + i]) for i in range(n_cells)}
    if not types <= {9, 12}:
        raise ParseError(f"unexpected cell types {sorted(types)}")
    return {"n_points": n_points, "n_cells": n_cells, "cell_types": sorted(types)}
