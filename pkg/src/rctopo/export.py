"""Result persistence: lossless CSV bundles and legacy-ASCII VTK geometry.

A bundle is a directory. Every file starts with a schema-version header and
records the normalized configuration that produced it (CSV: inline one-line
JSON; VTK: the 256-char title carries the schema id and the config digest,
with the full text in the bundle's config.toml). Floats are written with
repr(), which round-trips exactly, so CSV exports are lossless.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field

import numpy as np

from .domain import Problem, build_problem, emit_toml
from .optimizer import IterationRecord, RunResult

SCHEMA_PREFIX = "rctopo"
SCHEMA_VERSION = "v1"


@dataclass
class ExportBundle:
    """Everything a finished run persists, in memory."""

    problem: Problem
    mode: str
    x_c: np.ndarray
    rho: np.ndarray
    x_t: np.ndarray
    members: list  # (i, j, area)
    node_positions: np.ndarray
    records: list = field(default_factory=list)  # IterationRecord or raw rows
    inner_rows: list = field(default_factory=list)
    thickness: np.ndarray | None = None  # per element, VTS only


def bundle_from_result(result: RunResult) -> ExportBundle:
    return ExportBundle(
        problem=result.problem,
        mode=result.problem.run.mode,
        x_c=result.x_c,
        rho=result.rho,
        x_t=result.x_t,
        members=result.members,
        node_positions=result.node_positions,
        records=[r.row() for r in result.records],
        inner_rows=result.inner_rows,
        thickness=None if result.vts_field is None else result.vts_field.thickness,
    )


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def _config_text(problem: Problem) -> str:
    return emit_toml(problem.normalized)


def _config_json(problem: Problem) -> str:
    return json.dumps(problem.normalized, separators=(",", ":"), sort_keys=True)


def _write_csv(path, kind, problem, header, rows):
    with open(path, "w", newline="\n") as f:
        f.write(f"# schema: {SCHEMA_PREFIX}.{kind}.{SCHEMA_VERSION}\n")
        f.write(f"# config: {_config_json(problem)}\n")
        f.write(",".join(header) + "\n")
        for row in rows:
            f.write(",".join(_fmt(v) for v in row) + "\n")


def read_csv(path):
    """Read back a bundle CSV: returns (header, list of string-tuples)."""
    header = None
    rows = []
    with open(path) as f:
        for line in f:
            line = line.rstrip("\n")
            if not line or line.startswith("#"):
                continue
            if header is None:
                header = line.split(",")
            else:
                rows.append(tuple(line.split(",")))
    return header, rows


def write_bundle(result_or_bundle, outdir: str) -> None:
    bundle = result_or_bundle
    if isinstance(result_or_bundle, RunResult):
        bundle = bundle_from_result(result_or_bundle)
    os.makedirs(outdir, exist_ok=True)
    problem = bundle.problem
    with open(os.path.join(outdir, "config.toml"), "w", newline="\n") as f:
        f.write(f"# schema: {SCHEMA_PREFIX}.config.{SCHEMA_VERSION}\n")
        f.write(_config_text(problem))
    write_density_csv(bundle, os.path.join(outdir, "density.csv"))
    write_truss_csv(bundle, os.path.join(outdir, "truss_nodes.csv"), os.path.join(outdir, "truss_members.csv"))
    _write_csv(os.path.join(outdir, "history.csv"), "history", problem,
               IterationRecord.HEADER, bundle.records)
    _write_csv(os.path.join(outdir, "inner_trace.csv"), "inner_trace", problem,
               ("outer", "inner", "compliance", "switched"), bundle.inner_rows)
    write_vtk(bundle, os.path.join(outdir, "design.vtk"))


def write_density_csv(bundle: ExportBundle, path: str) -> None:
    mesh = bundle.problem.mesh
    header = ["element", "ix", "iy", "x_c", "rho"]
    if bundle.thickness is not None:
        header.append("thickness")
    rows = []
    for e in range(mesh.n_elements):
        ex, ey = divmod(e, mesh.ny)
        row = [e, ex, ey, bundle.x_c[e], bundle.rho[e]]
        if bundle.thickness is not None:
            row.append(bundle.thickness[e])
        rows.append(row)
    _write_csv(path, "density", bundle.problem, header, rows)


def write_truss_csv(bundle: ExportBundle, nodes_path: str, members_path: str) -> None:
    pos = bundle.node_positions
    _write_csv(nodes_path, "truss_nodes", bundle.problem, ("node", "x", "y"),
               [(i, pos[i, 0], pos[i, 1]) for i in range(len(pos))])
    rows = []
    for f, (a, b, area) in enumerate(bundle.members):
        rows.append((f, a, b, pos[a, 0], pos[a, 1], pos[b, 0], pos[b, 1], area, bundle.x_t[f]))
    _write_csv(members_path, "truss_members", bundle.problem,
               ("member", "node_i", "node_j", "x1", "y1", "x2", "y2", "base_area", "sizing"),
               rows)


def write_vtk(bundle: ExportBundle, path: str) -> None:
    """Legacy ASCII unstructured grid: density quads plus truss line cells.

    Truss nodes exactly on a mesh lattice point reuse that point; all cell data
    arrays cover quads and lines (zero-filled where not applicable).
    """
    mesh = bundle.problem.mesh
    h = mesh.element_size
    points = [(x, y) for x, y in mesh.node_coords]
    truss_point_ids = []
    for x, y in bundle.node_positions:
        ix, iy = x / h, y / h
        rix, riy = round(ix), round(iy)
        if (abs(ix - rix) <= 1e-9 and abs(iy - riy) <= 1e-9
                and 0 <= rix <= mesh.nx and 0 <= riy <= mesh.ny):
            truss_point_ids.append(int(rix * (mesh.ny + 1) + riy))
        else:
            truss_point_ids.append(len(points))
            points.append((x, y))

    n_quads = mesh.n_elements
    n_lines = len(bundle.members)
    digest = hashlib.sha256(_config_text(bundle.problem).encode()).hexdigest()
    lines = [
        "# vtk DataFile Version 3.0",
        f"{SCHEMA_PREFIX}.design.{SCHEMA_VERSION} config-sha256={digest}",
        "ASCII",
        "DATASET UNSTRUCTURED_GRID",
        f"POINTS {len(points)} double",
    ]
    for x, y in points:
        lines.append(f"{_fmt(x)} {_fmt(y)} 0.0")
    size = n_quads * 5 + n_lines * 3
    lines.append(f"CELLS {n_quads + n_lines} {size}")
    for e in range(n_quads):
        ex, ey = divmod(e, mesh.ny)
        n00 = ex * (mesh.ny + 1) + ey
        n10 = (ex + 1) * (mesh.ny + 1) + ey
        lines.append(f"4 {n00} {n10} {n10 + 1} {n00 + 1}")
    for a, b, _ in bundle.members:
        lines.append(f"2 {truss_point_ids[a]} {truss_point_ids[b]}")
    lines.append(f"CELL_TYPES {n_quads + n_lines}")
    lines.extend(["9"] * n_quads)
    lines.extend(["3"] * n_lines)
    lines.append(f"CELL_DATA {n_quads + n_lines}")

    def scalar_block(name, quad_vals, line_vals):
        lines.append(f"SCALARS {name} double 1")
        lines.append("LOOKUP_TABLE default")
        for v in quad_vals:
            lines.append(_fmt(v))
        for v in line_vals:
            lines.append(_fmt(v))

    scalar_block("density", bundle.rho, [0.0] * n_lines)
    member_size = [bundle.x_t[f] * area for f, (_, _, area) in enumerate(bundle.members)]
    scalar_block("member_size", [0.0] * n_quads, member_size)
    if bundle.thickness is not None:
        scalar_block("thickness", bundle.thickness, [0.0] * n_lines)
    with open(path, "w", newline="\n") as f:
        f.write("\n".join(lines) + "\n")


def load_bundle(indir: str) -> ExportBundle:
    """Reconstruct an ExportBundle from a bundle directory (CSV side only)."""
    cfg_path = os.path.join(indir, "config.toml")
    with open(cfg_path) as f:
        text = f.read()
    problem = build_problem(text)
    header, rows = read_csv(os.path.join(indir, "density.csv"))
    x_c = np.array([float(r[header.index("x_c")]) for r in rows])
    rho = np.array([float(r[header.index("rho")]) for r in rows])
    thickness = None
    if "thickness" in header:
        thickness = np.array([float(r[header.index("thickness")]) for r in rows])
    _, nrows = read_csv(os.path.join(indir, "truss_nodes.csv"))
    positions = np.array([[float(r[1]), float(r[2])] for r in nrows]).reshape(-1, 2)
    mh, mrows = read_csv(os.path.join(indir, "truss_members.csv"))
    members = [(int(r[1]), int(r[2]), float(r[mh.index("base_area")])) for r in mrows]
    x_t = np.array([float(r[mh.index("sizing")]) for r in mrows])
    _, hist = read_csv(os.path.join(indir, "history.csv"))
    _, inner = read_csv(os.path.join(indir, "inner_trace.csv"))
    return ExportBundle(
        problem=problem, mode=problem.run.mode, x_c=x_c, rho=rho, x_t=x_t,
        members=members, node_positions=positions, records=list(hist),
        inner_rows=list(inner), thickness=thickness)
