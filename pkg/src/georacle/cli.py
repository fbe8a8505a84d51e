"""Command-line interface: geometry configs, refinement runs, tables.

Subcommands
-----------
``refine``
    Load a native mesh and a geometry config, refine (uniform or
    indicator-driven, with an optional anisotropic pre-pass), and write
    ``<out>.vtk``, ``<out>.mesh.json``, and ``<out>.report.json``.
``table1``
    Interpolation-error degradation experiment on the spherical shell;
    writes CSV rows ``ndof,error_coarse,error_after_refine``.
``annulus-svd``
    Singular values of the quarter-annulus mapping Jacobian on an 11×11
    sample grid, for either interior-point rule; writes CSV.
``graded``
    Refine the unit square under a grading chart; writes a VTK file.

Exit codes: 0 success, 2 usage or configuration error, 3 geometry
failure at run time (the message names the failing entity).

Geometry config schema (JSON)::

    {
      "version": 1,
      "manifolds": [
        {"id": 1, "kind": "polar", "center": [0.0, 0.0]},
        {"id": 2, "kind": "spherical", "center": [0.0, 0.0, 0.0]},
        {"id": 3, "kind": "stl_projection", "stl_path": "hull.stl",
         "strategy": "directional", "direction": [0, 0, 1]}
      ]
    }

Supported kinds: ``flat``, ``polar``, ``spherical``, ``cylindrical``,
``sphere_projection``, ``graded_square``, ``graded_sine``,
``stl_projection`` (strategies ``closest_point``, ``normal_to_mesh``,
``directional``), and ``transfinite`` (corner ``vertices`` plus
``edges``/``faces`` maps whose values reference ids declared earlier in
the document).  Directions are unit-normalized on load.  Which mesh
entity follows which id is stored in the mesh file itself.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .charts import (
    CylindricalChart,
    GradedSineChart,
    GradedSquareChart,
    PolarChart,
    SphereProjectionManifold,
    SphericalAverageManifold,
)
from .core import FlatManifold
from .errors import GeometryError, ParseError
from .experiments import (
    annulus_svd_table,
    graded_square_setup,
    run_refinement,
)
from .felite import table1_experiment
from .mesh import ManifoldRegistry
from .meshio import load_mesh, save_mesh, write_vtk
from .transfinite import TransfiniteCell
from .trisurface import (
    ClosestPointProjection,
    DirectionalProjection,
    NormalToMeshProjection,
    SurfaceProjectionManifold,
    load_stl,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3

CONFIG_VERSION = 1


# ---------------------------------------------------------------------------
# geometry configuration


def _center(entry: dict, dim: int, default=None):
    center = entry.get("center", default)
    if center is None:
        raise ParseError(
            f"manifold id {entry.get('id')}: kind {entry['kind']!r} "
            f"requires a 'center' with {dim} coordinates"
        )
    center = [float(c) for c in center]
    if len(center) != dim:
        raise ParseError(
            f"manifold id {entry.get('id')}: 'center' must have {dim} "
            f"coordinates, got {len(center)}"
        )
    return center


def _build_stl_projection(entry: dict, base: Path):
    path = entry.get("stl_path")
    if not path:
        raise ParseError(
            f"manifold id {entry.get('id')}: stl_projection requires 'stl_path'"
        )
    full = Path(path)
    if not full.is_absolute():
        full = base / full
    if not full.exists():
        raise ParseError(
            f"manifold id {entry.get('id')}: STL file not found: {full}"
        )
    surface = load_stl(full)
    name = entry.get("strategy", "closest_point")
    if name == "closest_point":
        strategy = ClosestPointProjection()
    elif name == "normal_to_mesh":
        strategy = NormalToMeshProjection()
    elif name == "directional":
        direction = entry.get("direction")
        if direction is None:
            raise ParseError(
                f"manifold id {entry.get('id')}: directional projection "
                "requires a 'direction'"
            )
        d = np.asarray(direction, dtype=float)
        norm = float(np.linalg.norm(d))
        if norm <= 0.0:
            raise ParseError(
                f"manifold id {entry.get('id')}: 'direction' must be nonzero"
            )
        strategy = DirectionalProjection(direction=tuple(d / norm))
    else:
        raise ParseError(
            f"manifold id {entry.get('id')}: unknown projection strategy "
            f"{name!r}"
        )
    return SurfaceProjectionManifold(surface, strategy)


def _build_transfinite(entry: dict, registry: ManifoldRegistry):
    vertices = entry.get("vertices")
    if vertices is None:
        raise ParseError(
            f"manifold id {entry.get('id')}: transfinite requires 'vertices'"
        )

    def resolve_refs(mapping_key):
        out = {}
        for entity, ref in (entry.get(mapping_key) or {}).items():
            ref = int(ref)
            if ref not in registry.ids():
                raise ParseError(
                    f"manifold id {entry.get('id')}: {mapping_key} entry "
                    f"{entity!r} references id {ref}, which is not declared "
                    "earlier in the document"
                )
            out[int(entity)] = registry.resolve(ref)
        return out

    try:
        return TransfiniteCell(np.asarray(vertices, dtype=float),
                               edge_manifolds=resolve_refs("edges"),
                               face_manifolds=resolve_refs("faces"))
    except ValueError as exc:
        raise ParseError(f"manifold id {entry.get('id')}: {exc}") from exc


def build_registry(doc: dict, base: Path) -> ManifoldRegistry:
    """Instantiate the oracles a geometry config declares."""
    if not isinstance(doc, dict):
        raise ParseError("geometry config must be a JSON object")
    version = doc.get("version")
    if version != CONFIG_VERSION:
        raise ParseError(
            f"unsupported geometry config version {version!r} "
            f"(expected {CONFIG_VERSION})"
        )
    manifolds = doc.get("manifolds")
    if not isinstance(manifolds, list):
        raise ParseError("geometry config needs a 'manifolds' list")
    registry = ManifoldRegistry()
    seen = set()
    for entry in manifolds:
        if not isinstance(entry, dict) or "id" not in entry or "kind" not in entry:
            raise ParseError(
                "every manifold entry needs at least 'id' and 'kind'"
            )
        mid = int(entry["id"])
        if mid in seen:
            raise ParseError(f"manifold id {mid} declared twice")
        kind = entry["kind"]
        if kind == "flat":
            oracle = FlatManifold()
        elif kind == "polar":
            oracle = PolarChart(center=_center(entry, 2, (0.0, 0.0)))
        elif kind == "spherical":
            oracle = SphericalAverageManifold(center=_center(entry, 3))
        elif kind == "cylindrical":
            oracle = CylindricalChart(center=_center(entry, 3, (0.0, 0.0, 0.0)))
        elif kind == "sphere_projection":
            oracle = SphereProjectionManifold(center=_center(entry, 3))
        elif kind == "graded_square":
            oracle = GradedSquareChart()
        elif kind == "graded_sine":
            oracle = GradedSineChart()
        elif kind == "stl_projection":
            oracle = _build_stl_projection(entry, base)
        elif kind == "transfinite":
            oracle = _build_transfinite(entry, registry)
        else:
            raise ParseError(
                f"manifold id {mid}: unknown kind {kind!r}"
            )
        try:
            registry.register(mid, oracle)
        except ValueError as exc:
            raise ParseError(str(exc)) from exc
        seen.add(mid)
    return registry


def load_geometry(path) -> ManifoldRegistry:
    """Read a geometry config file into a registry of oracles."""
    path = Path(path)
    if not path.exists():
        raise ParseError(f"geometry config not found: {path}")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: not valid JSON ({exc})") from exc
    return build_registry(doc, path.parent)


# ---------------------------------------------------------------------------
# subcommands


def cmd_refine(args) -> int:
    registry = load_geometry(args.geometry)
    mesh = load_mesh(args.mesh)
    mesh, report = run_refinement(mesh, registry, args.cycles,
                                  adaptive=args.adaptive, aniso=args.aniso)
    out = str(args.out)
    write_vtk(mesh, out + ".vtk")
    save_mesh(mesh, out + ".mesh.json")
    Path(out + ".report.json").write_text(report.to_json())
    print(f"refined to {mesh.n_active} active cells; "
          f"wrote {out}.vtk, {out}.mesh.json, {out}.report.json")
    return EXIT_OK


def cmd_table1(args) -> int:
    if not 1 <= args.degree <= 7:
        raise ParseError(f"--degree must be in 1..7, got {args.degree}")
    if args.cycles < 1:
        raise ParseError(f"--cycles must be positive, got {args.cycles}")
    rows = table1_experiment(args.degree, args.cycles, curved=not args.flat)
    lines = ["ndof,error_coarse,error_after_refine"]
    lines += [f"{nd},{ec!r},{ea!r}" for nd, ec, ea in rows]
    Path(args.out).write_text("\n".join(lines) + "\n")
    print(f"wrote {len(rows)} rows to {args.out}")
    return EXIT_OK


def cmd_annulus_svd(args) -> int:
    if args.degree < 1:
        raise ParseError(f"--degree must be ≥ 1, got {args.degree}")
    rows, smin, smax = annulus_svd_table(args.degree, args.interior)
    lines = [f"# sigma_min {smin!r}", f"# sigma_max {smax!r}",
             "xhat0,xhat1,sigma_min,sigma_max"]
    lines += [f"{x!r},{y!r},{a!r},{b!r}" for x, y, a, b in rows]
    Path(args.out).write_text("\n".join(lines) + "\n")
    print(f"degree {args.degree} {args.interior}: "
          f"sigma range [{smin:.6g}, {smax:.6g}] over {len(rows)} samples")
    return EXIT_OK


def cmd_graded(args) -> int:
    if args.cycles < 0:
        raise ParseError(f"--cycles must be ≥ 0, got {args.cycles}")
    try:
        mesh, registry = graded_square_setup(args.chart)
    except ValueError as exc:
        raise ParseError(str(exc)) from exc
    mesh, _ = run_refinement(mesh, registry, args.cycles)
    write_vtk(mesh, args.out)
    print(f"wrote {mesh.n_active}-cell graded mesh to {args.out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="georacle",
        description="Oracle-driven curved-mesh refinement and experiments",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("refine", help="refine a mesh under a geometry config")
    p.add_argument("--mesh", required=True, help="native mesh JSON file")
    p.add_argument("--geometry", required=True, help="geometry config JSON")
    p.add_argument("--cycles", type=int, required=True)
    p.add_argument("--adaptive", type=float, default=None, metavar="FRACTION",
                   help="refine this fraction by curvature indicator")
    p.add_argument("--aniso", type=float, default=None, metavar="LAMBDA",
                   help="anisotropic pre-pass above this aspect ratio")
    p.add_argument("--out", required=True,
                   help="output prefix (.vtk/.mesh.json/.report.json)")
    p.set_defaults(func=cmd_refine)

    p = sub.add_parser("table1", help="interpolation degradation experiment")
    p.add_argument("--degree", type=int, required=True)
    p.add_argument("--cycles", type=int, required=True)
    p.add_argument("--flat", action="store_true",
                   help="flat-manifold control instead of the curved shell")
    p.add_argument("--out", required=True, help="CSV output path")
    p.set_defaults(func=cmd_table1)

    p = sub.add_parser("annulus-svd",
                       help="singular values of the quarter-annulus mapping")
    p.add_argument("--degree", type=int, required=True)
    p.add_argument("--interior", choices=("transfinite", "laplace"),
                   default="transfinite")
    p.add_argument("--out", required=True, help="CSV output path")
    p.set_defaults(func=cmd_annulus_svd)

    p = sub.add_parser("graded", help="refine the unit square under a chart")
    p.add_argument("--chart", choices=("square", "sine"), required=True)
    p.add_argument("--cycles", type=int, required=True)
    p.add_argument("--out", required=True, help="VTK output path")
    p.set_defaults(func=cmd_graded)
    return parser


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        return args.func(args)
    except ParseError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except GeometryError as exc:
        print(f"geometry error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
