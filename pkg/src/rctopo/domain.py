"""Problem definition: mesh, boundary conditions, ground structure, run configuration.

Everything downstream (FEA, coupling, optimization, export) reads the objects
built here and treats them as immutable. Node and element indexing is
column-major with y running fastest, so identical input documents always
produce identical DOF maps.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

try:
    import tomllib  # py >= 3.11
except ModuleNotFoundError:  # pragma: no cover
    import tomli as tomllib


class ConfigError(ValueError):
    """Raised for unparseable or semantically invalid configuration documents."""


# Named node anchors resolve on the structured grid; midpoints use floor division
# so the same document resolves identically at every call.
_ANCHORS = {
    "bottom-left": lambda nx, ny: (0, 0),
    "bottom-right": lambda nx, ny: (nx, 0),
    "top-left": lambda nx, ny: (0, ny),
    "top-right": lambda nx, ny: (nx, ny),
    "top-mid": lambda nx, ny: (nx // 2, ny),
    "bottom-mid": lambda nx, ny: (nx // 2, 0),
    "left-mid": lambda nx, ny: (0, ny // 2),
    "right-mid": lambda nx, ny: (nx, ny // 2),
    "center": lambda nx, ny: (nx // 2, ny // 2),
}

_EDGES = ("left", "right", "bottom", "top")


@dataclass
class Mesh:
    """Structured grid of square 4-node plane-stress elements.

    Node ``(ix, iy)`` has id ``ix * (ny + 1) + iy`` and sits at
    ``(ix * element_size, iy * element_size)``; element ``(ex, ey)`` has id
    ``ex * ny + ey``. DOFs are ``(2 * node, 2 * node + 1)`` for (x, y).
    """

    nx: int
    ny: int
    element_size: float
    node_coords: np.ndarray = field(init=False, repr=False)
    element_dofs: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.nx < 1 or self.ny < 1:
            raise ConfigError(f"mesh.nx/mesh.ny: need at least 1 element per axis, got {self.nx}x{self.ny}")
        if not (self.element_size > 0):
            raise ConfigError(f"mesh.element_size: must be > 0, got {self.element_size}")
        ix, iy = np.meshgrid(np.arange(self.nx + 1), np.arange(self.ny + 1), indexing="ij")
        self.node_coords = np.column_stack([ix.ravel() * self.element_size, iy.ravel() * self.element_size])
        ex, ey = np.meshgrid(np.arange(self.nx), np.arange(self.ny), indexing="ij")
        ex, ey = ex.ravel(), ey.ravel()
        n00 = ex * (self.ny + 1) + ey
        n10 = (ex + 1) * (self.ny + 1) + ey
        n11 = n10 + 1
        n01 = n00 + 1
        nodes = np.column_stack([n00, n10, n11, n01])
        dofs = np.empty((self.n_elements, 8), dtype=np.intp)
        dofs[:, 0::2] = 2 * nodes
        dofs[:, 1::2] = 2 * nodes + 1
        self.element_dofs = dofs

    @property
    def n_nodes(self) -> int:
        return (self.nx + 1) * (self.ny + 1)

    @property
    def n_elements(self) -> int:
        return self.nx * self.ny

    @property
    def dof_count(self) -> int:
        return 2 * self.n_nodes

    @property
    def width(self) -> float:
        return self.nx * self.element_size

    @property
    def height(self) -> float:
        return self.ny * self.element_size

    def node_id(self, ix: int, iy: int) -> int:
        if not (0 <= ix <= self.nx and 0 <= iy <= self.ny):
            raise ConfigError(f"node ({ix}, {iy}) outside grid 0..{self.nx} x 0..{self.ny}")
        return ix * (self.ny + 1) + iy

    def element_id(self, ex: int, ey: int) -> int:
        return ex * self.ny + ey

    def element_centers(self) -> np.ndarray:
        ex, ey = np.meshgrid(np.arange(self.nx), np.arange(self.ny), indexing="ij")
        h = self.element_size
        return np.column_stack([(ex.ravel() + 0.5) * h, (ey.ravel() + 0.5) * h])


@dataclass
class BoundaryConditions:
    """Fixed DOFs and point loads, already resolved to raw DOF indices."""

    fixed_dofs: np.ndarray  # sorted, unique
    point_loads: list[tuple[int, float]]

    def load_vector(self, dof_count: int) -> np.ndarray:
        f = np.zeros(dof_count)
        for dof, mag in self.point_loads:
            f[dof] += mag
        return f


@dataclass
class GroundStructure:
    """Candidate truss layout: movable nodes, members with base areas, move boxes.

    ``bounds_lo`` / ``bounds_hi`` are absolute coordinate boxes per node; the
    initial position always lies inside its box, and boxes are clipped to the
    design envelope so every admissible placement stays inside it.
    """

    nodes: np.ndarray  # (n, 2) initial positions
    bounds_lo: np.ndarray  # (n, 2)
    bounds_hi: np.ndarray  # (n, 2)
    members: list[tuple[int, int, float]]  # (node_i, node_j, base_area)

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_members(self) -> int:
        return len(self.members)


def min_box_distance(lo_a, hi_a, lo_b, hi_b) -> float:
    """Smallest distance between two axis-aligned boxes (0 if they intersect)."""
    gx = max(0.0, max(lo_a[0] - hi_b[0], lo_b[0] - hi_a[0]))
    gy = max(0.0, max(lo_a[1] - hi_b[1], lo_b[1] - hi_a[1]))
    return math.hypot(gx, gy)


@dataclass
class BimodulusConfig:
    enabled: bool = True
    e_comp: float = 180.0
    e_tens: float = 4.5
    nu_comp: float = 0.3
    nu_tens: float = 0.0075
    truss_e_tens: float = 5800.0
    truss_e_comp: float = 0.01
    ratio_start: float = 0.3
    ratio_step: float = 0.025
    ratio_floor: float = 0.025
    ratio_interval: int = 10
    inner_tol: float = 0.001
    inner_cap: int = 50


@dataclass
class RunConfig:
    """All optimizer knobs, defaults filled in at parse time."""

    mode: str = "binary"  # "binary" | "vts"
    v_c_max: float = 0.0
    v_t_max: float = 1.0
    thickness: float = 1.0
    simp_penalty: float = 3.0
    simp_floor: float = 1e-9
    filter_radius: float = 0.0  # resolved to 2.5 * element_size if unset
    heaviside_enabled: bool = True
    heaviside_eta: float = 0.5
    beta_schedule: list[float] = field(default_factory=lambda: [1.0, 2.0, 4.0, 8.0, 16.0, 32.0, 64.0])
    beta_interval: int = 30
    vts_m: float = 0.3
    vts_c: float = 20.0
    vts_report_threshold: float = 0.1
    ssm_radius: float = 0.0  # resolved to 1.5 * element_size if unset
    max_outer: int = 300
    change_tol: float = 0.01
    move_limit_density: float = 0.1
    move_limit_sizing: float = 0.1
    move_limit_position: float = 0.05
    initial_density: float = -1.0  # resolved to v_c_max / envelope volume if unset
    initial_sizing: float = -1.0  # resolved to steel budget fraction if unset
    split_interval: int = 40
    split_min_length: float = 0.0  # resolved to 2 * element_size if unset
    split_xy_ratio: float = 0.5
    min_member_length: float = 0.0  # resolved to 1e-3 * element_size if unset
    bimodulus: BimodulusConfig = field(default_factory=BimodulusConfig)


@dataclass
class Problem:
    """A fully validated optimization problem plus its normalized document."""

    mesh: Mesh
    bcs: BoundaryConditions
    ground: GroundStructure
    run: RunConfig
    normalized: dict = field(repr=False, default_factory=dict)


def total_envelope_volume(mesh: Mesh, thickness: float) -> float:
    """Volume of the full design envelope at the given out-of-plane thickness."""
    return mesh.nx * mesh.ny * mesh.element_size**2 * thickness


# ---------------------------------------------------------------------------
# document parsing


def _req(table: dict, key: str, path: str):
    if key not in table:
        raise ConfigError(f"{path}.{key}: required field missing")
    return table[key]


def _check_known(table: dict, known: set, path: str):
    for k in table:
        if k not in known:
            raise ConfigError(f"{path}.{k}: unknown field")


def _resolve_node(entry: dict, mesh: Mesh, path: str) -> list[int]:
    """Resolve an anchor/node spec to a list of node ids (edges give many)."""
    keys = [k for k in ("anchor", "node", "edge") if k in entry]
    if len(keys) != 1:
        raise ConfigError(f"{path}: exactly one of anchor/node/edge required")
    kind = keys[0]
    if kind == "anchor":
        name = entry["anchor"]
        if name not in _ANCHORS:
            raise ConfigError(f"{path}.anchor: unknown anchor {name!r} (known: {', '.join(sorted(_ANCHORS))})")
        ix, iy = _ANCHORS[name](mesh.nx, mesh.ny)
        return [mesh.node_id(ix, iy)]
    if kind == "node":
        pair = entry["node"]
        if not (isinstance(pair, list) and len(pair) == 2 and all(isinstance(v, int) for v in pair)):
            raise ConfigError(f"{path}.node: expected [ix, iy] integer pair")
        return [mesh.node_id(pair[0], pair[1])]
    edge = entry["edge"]
    if edge not in _EDGES:
        raise ConfigError(f"{path}.edge: unknown edge {edge!r}")
    if edge == "left":
        return [mesh.node_id(0, iy) for iy in range(mesh.ny + 1)]
    if edge == "right":
        return [mesh.node_id(mesh.nx, iy) for iy in range(mesh.ny + 1)]
    if edge == "bottom":
        return [mesh.node_id(ix, 0) for ix in range(mesh.nx + 1)]
    return [mesh.node_id(ix, mesh.ny) for ix in range(mesh.nx + 1)]


def _rigid_body_rank(mesh: Mesh, fixed_dofs: np.ndarray) -> int:
    """Rank of the three 2D rigid-body modes restricted to the fixed DOFs."""
    if len(fixed_dofs) == 0:
        return 0
    rows = []
    for dof in fixed_dofs:
        node, comp = divmod(int(dof), 2)
        x, y = mesh.node_coords[node]
        if comp == 0:
            rows.append((1.0, 0.0, -y))
        else:
            rows.append((0.0, 1.0, x))
    return int(np.linalg.matrix_rank(np.array(rows)))


def _parse_supports(doc: dict, mesh: Mesh) -> np.ndarray:
    entries = doc.get("supports", [])
    fixed = set()
    for i, entry in enumerate(entries):
        path = f"supports[{i}]"
        _check_known(entry, {"anchor", "node", "edge", "dofs"}, path)
        dofs = _req(entry, "dofs", path)
        if dofs not in ("x", "y", "xy"):
            raise ConfigError(f"{path}.dofs: expected 'x', 'y' or 'xy', got {dofs!r}")
        for nid in _resolve_node(entry, mesh, path):
            if "x" in dofs:
                fixed.add(2 * nid)
            if "y" in dofs:
                fixed.add(2 * nid + 1)
    fixed_arr = np.array(sorted(fixed), dtype=np.intp)
    if _rigid_body_rank(mesh, fixed_arr) < 3:
        raise ConfigError("supports: rigid body motion (need at least 3 independent constraints in 2D)")
    return fixed_arr


def _parse_loads(doc: dict, mesh: Mesh, fixed: np.ndarray) -> list[tuple[int, float]]:
    entries = doc.get("loads", [])
    fixed_set = set(int(d) for d in fixed)
    loads = []
    for i, entry in enumerate(entries):
        path = f"loads[{i}]"
        _check_known(entry, {"anchor", "node", "fx", "fy"}, path)
        if "edge" in entry:
            raise ConfigError(f"{path}: distributed edge loads are not supported")
        for nid in _resolve_node(entry, mesh, path):
            for comp, key in ((0, "fx"), (1, "fy")):
                mag = float(entry.get(key, 0.0))
                if mag == 0.0:
                    continue
                dof = 2 * nid + comp
                if dof in fixed_set:
                    raise ConfigError(f"{path}.{key}: load applied to fixed DOF {dof}")
                loads.append((dof, mag))
    return loads


def _parse_ground(doc: dict, mesh: Mesh, eps_len: float) -> GroundStructure:
    gs = doc.get("ground_structure", {})
    _check_known(gs, {"nodes", "members"}, "ground_structure")
    node_entries = gs.get("nodes", [])
    positions, lo, hi = [], [], []
    env_lo = np.zeros(2)
    env_hi = np.array([mesh.width, mesh.height])
    box_keys = {"lo_x", "hi_x", "lo_y", "hi_y"}
    for i, entry in enumerate(node_entries):
        path = f"ground_structure.nodes[{i}]"
        _check_known(entry, {"x", "y", "dx", "dy"} | box_keys, path)
        p = np.array([float(_req(entry, "x", path)), float(_req(entry, "y", path))])
        if (p < env_lo).any() or (p > env_hi).any():
            raise ConfigError(f"{path}: position {p.tolist()} outside design envelope")
        if box_keys & set(entry):
            # explicit move box (the normalized echo uses this form: it
            # round-trips bit-exactly where clipped dx/dy would not)
            node_lo = np.array([float(_req(entry, "lo_x", path)), float(_req(entry, "lo_y", path))])
            node_hi = np.array([float(_req(entry, "hi_x", path)), float(_req(entry, "hi_y", path))])
            if (node_lo > p).any() or (node_hi < p).any():
                raise ConfigError(f"{path}: move box must contain the node position")
        else:
            d = np.array([float(entry.get("dx", 0.0)), float(entry.get("dy", 0.0))])
            if (d < 0).any():
                raise ConfigError(f"{path}: dx/dy must be >= 0")
            node_lo = p - d
            node_hi = p + d
        positions.append(p)
        lo.append(np.maximum(node_lo, env_lo))
        hi.append(np.minimum(node_hi, env_hi))
    positions = np.array(positions).reshape(-1, 2)
    lo = np.array(lo).reshape(-1, 2)
    hi = np.array(hi).reshape(-1, 2)

    members = []
    for i, entry in enumerate(gs.get("members", [])):
        path = f"ground_structure.members[{i}]"
        _check_known(entry, {"nodes", "area"}, path)
        pair = _req(entry, "nodes", path)
        if not (isinstance(pair, list) and len(pair) == 2):
            raise ConfigError(f"{path}.nodes: expected [i, j] node-index pair")
        a, b = int(pair[0]), int(pair[1])
        if not (0 <= a < len(positions) and 0 <= b < len(positions)):
            raise ConfigError(f"{path}.nodes: index out of range (have {len(positions)} nodes)")
        if a == b:
            raise ConfigError(f"{path}.nodes: member endpoints must differ")
        area = float(entry.get("area", 1.0))
        if area <= 0:
            raise ConfigError(f"{path}.area: must be > 0")
        if min_box_distance(lo[a], hi[a], lo[b], hi[b]) <= eps_len:
            raise ConfigError(
                f"{path}: member ({a}, {b}) admits zero (or < {eps_len:g}) length within the node move bounds"
            )
        members.append((a, b, area))
    return GroundStructure(nodes=positions, bounds_lo=lo, bounds_hi=hi, members=members)


def _parse_run(doc: dict, mesh: Mesh, ground: GroundStructure) -> RunConfig:
    raw = doc.get("run", {})
    known = {f for f in RunConfig.__dataclass_fields__ if f != "bimodulus"} | {"bimodulus"}
    _check_known(raw, known, "run")
    bm_raw = raw.pop("bimodulus", {})
    _check_known(bm_raw, set(BimodulusConfig.__dataclass_fields__), "run.bimodulus")
    run = RunConfig(**{k: v for k, v in raw.items()})
    run.bimodulus = BimodulusConfig(**bm_raw)
    h = mesh.element_size

    if run.mode not in ("binary", "vts"):
        raise ConfigError(f"run.mode: expected 'binary' or 'vts', got {run.mode!r}")
    if run.mode == "vts":
        run.heaviside_enabled = False
    if run.filter_radius <= 0:
        run.filter_radius = 2.5 * h
    if run.ssm_radius <= 0:
        run.ssm_radius = 1.5 * h
    if run.split_min_length <= 0:
        run.split_min_length = 2.0 * h
    if run.min_member_length <= 0:
        run.min_member_length = 1e-3 * h
    if run.thickness <= 0:
        raise ConfigError(f"run.thickness: must be > 0, got {run.thickness}")

    env = total_envelope_volume(mesh, run.thickness)
    if run.v_c_max <= 0:
        raise ConfigError("run.v_c_max: required and must be > 0")
    if run.v_c_max > env * (1 + 1e-12):
        raise ConfigError(f"run.v_c_max: {run.v_c_max} exceeds envelope volume {env}")
    if run.v_t_max <= 0:
        raise ConfigError("run.v_t_max: must be > 0")
    if run.initial_density < 0:
        run.initial_density = run.v_c_max / env
    run.initial_density = min(1.0, run.initial_density)
    if run.initial_sizing < 0:
        total = sum(
            area * math.hypot(*(ground.nodes[b] - ground.nodes[a])) for a, b, area in ground.members
        )
        run.initial_sizing = min(1.0, run.v_t_max / total) if total > 0 else 0.5

    bm = run.bimodulus
    if not (0 < bm.inner_tol < 1):
        raise ConfigError(f"run.bimodulus.inner_tol: must be in (0, 1), got {bm.inner_tol}")
    if bm.ratio_floor > bm.ratio_start:
        raise ConfigError("run.bimodulus: ratio_floor must be <= ratio_start")
    if not run.beta_schedule:
        run.heaviside_enabled = False
    return run


def build_problem(text: str) -> Problem:
    """Parse and validate a configuration document into a Problem.

    Raises ConfigError naming the offending field (or the parser's line/column
    for syntax errors). The returned Problem carries a normalized document in
    which every default has been resolved; re-parsing that document yields an
    identical problem.
    """
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"parse failure: {exc}") from exc
    _check_known(doc, {"mesh", "envelope", "supports", "loads", "ground_structure", "run"}, "document")

    mesh_raw = _req(doc, "mesh", "document")
    _check_known(mesh_raw, {"nx", "ny", "element_size"}, "mesh")
    mesh = Mesh(
        nx=int(_req(mesh_raw, "nx", "mesh")),
        ny=int(_req(mesh_raw, "ny", "mesh")),
        element_size=float(_req(mesh_raw, "element_size", "mesh")),
    )

    env_raw = doc.get("envelope", {})
    _check_known(env_raw, {"thickness"}, "envelope")

    fixed = _parse_supports(doc, mesh)
    loads = _parse_loads(doc, mesh, fixed)
    bcs = BoundaryConditions(fixed_dofs=fixed, point_loads=loads)

    run_doc = dict(doc.get("run", {}))
    if "thickness" in env_raw:
        run_doc["thickness"] = float(env_raw["thickness"])
    eps_probe = float(run_doc.get("min_member_length", 0.0))
    if eps_probe <= 0:
        eps_probe = 1e-3 * mesh.element_size
    ground = _parse_ground(doc, mesh, eps_probe)
    run = _parse_run({"run": run_doc}, mesh, ground)

    problem = Problem(mesh=mesh, bcs=bcs, ground=ground, run=run)
    problem.normalized = normalize(problem, doc)
    return problem


def normalize(problem: Problem, raw_doc: dict) -> dict:
    """Echo the problem back as a plain dict with every default resolved."""
    mesh, run, ground = problem.mesh, problem.run, problem.ground
    doc = {
        "mesh": {"nx": mesh.nx, "ny": mesh.ny, "element_size": mesh.element_size},
        "envelope": {"thickness": run.thickness},
        "supports": [dict(e) for e in raw_doc.get("supports", [])],
        "loads": [dict(e) for e in raw_doc.get("loads", [])],
        "ground_structure": {
            "nodes": [
                {
                    "x": float(ground.nodes[i, 0]),
                    "y": float(ground.nodes[i, 1]),
                    "lo_x": float(ground.bounds_lo[i, 0]),
                    "hi_x": float(ground.bounds_hi[i, 0]),
                    "lo_y": float(ground.bounds_lo[i, 1]),
                    "hi_y": float(ground.bounds_hi[i, 1]),
                }
                for i in range(ground.n_nodes)
            ],
            "members": [{"nodes": [a, b], "area": area} for a, b, area in ground.members],
        },
        "run": _run_to_dict(run),
    }
    return doc


def _run_to_dict(run: RunConfig) -> dict:
    d = {}
    for name in RunConfig.__dataclass_fields__:
        if name == "bimodulus":
            continue
        if name == "thickness":
            continue  # echoed under [envelope]
        d[name] = getattr(run, name)
    d["bimodulus"] = {k: getattr(run.bimodulus, k) for k in BimodulusConfig.__dataclass_fields__}
    return d


def _toml_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, str):
        return '"' + v.replace("\\", "\\\\").replace('"', '\\"') + '"'
    if isinstance(v, list):
        return "[" + ", ".join(_toml_value(x) for x in v) + "]"
    raise TypeError(f"cannot serialize {type(v)}")


def emit_toml(doc: dict) -> str:
    """Serialize a normalized document deterministically (round-trips via repr)."""
    lines: list[str] = []

    def is_table_list(v):
        return isinstance(v, list) and len(v) > 0 and isinstance(v[0], dict)

    def walk(table: dict, prefix: str):
        scalars = [(k, v) for k, v in table.items() if not isinstance(v, dict) and not is_table_list(v)]
        subtables = [(k, v) for k, v in table.items() if isinstance(v, dict)]
        table_lists = [(k, v) for k, v in table.items() if is_table_list(v)]
        if prefix and (scalars or not (subtables or table_lists)):
            lines.append(f"[{prefix}]")
        for k, v in scalars:
            lines.append(f"{k} = {_toml_value(v)}")
        if prefix and scalars:
            lines.append("")
        for k, v in table_lists:
            path = f"{prefix}.{k}" if prefix else k
            for entry in v:
                lines.append(f"[[{path}]]")
                for ek, ev in entry.items():
                    lines.append(f"{ek} = {_toml_value(ev)}")
                lines.append("")
        for k, v in subtables:
            walk(v, f"{prefix}.{k}" if prefix else k)

    walk(doc, "")
    return "\n".join(lines).rstrip() + "\n"
