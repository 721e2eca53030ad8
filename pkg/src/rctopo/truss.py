"""Truss members, stiffness spreading onto the continuum, and their sensitivities.

Truss nodes have no global DOFs of their own: each endpoint's motion is
interpolated from nearby continuum nodes through normalized distance weights
(a raised-cosine kernel with compact support r). Member stiffness therefore
enters the global matrix as N~^T K_e N~, which keeps the coupling energy-exact
and makes node positions differentiable design variables.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .domain import min_box_distance

_H_AXIAL = np.array([
    [1.0, 0.0, -1.0, 0.0],
    [0.0, 0.0, 0.0, 0.0],
    [-1.0, 0.0, 1.0, 0.0],
    [0.0, 0.0, 0.0, 0.0],
])


class ZeroLengthMemberError(ValueError):
    def __init__(self, msg, member=None):
        super().__init__(msg)
        self.member = member


class IsolatedNodeError(ValueError):
    """A truss node has no continuum node within the spreading radius."""


def transformation(x1, y1, x2, y2, eps_len=1e-12):
    """Direction cosines and the 4x4 local-global rotation for one member."""
    dx, dy = x2 - x1, y2 - y1
    L = math.hypot(dx, dy)
    if L <= eps_len:
        raise ZeroLengthMemberError(f"member length {L:g} below minimum {eps_len:g}")
    C, S = dx / L, dy / L
    T = np.array([
        [C, S, 0.0, 0.0],
        [-S, C, 0.0, 0.0],
        [0.0, 0.0, C, S],
        [0.0, 0.0, -S, C],
    ])
    return T, C, S


def local_stiffness(e_mod, area, length) -> np.ndarray:
    """Axial stiffness in member coordinates (rank 1 up to the rigid modes)."""
    return (e_mod * area / length) * _H_AXIAL


def global_stiffness(e_mod, area, x1, y1, x2, y2, eps_len=1e-12) -> np.ndarray:
    T, _, _ = transformation(x1, y1, x2, y2, eps_len)
    L = math.hypot(x2 - x1, y2 - y1)
    return T.T @ local_stiffness(e_mod, area, L) @ T


def stiffness_position_derivatives(e_mod, area, x1, y1, x2, y2):
    """d K_e / d (x1, y1, x2, y2), shape (4, 4, 4).

    Chain rule through the rotation matrix and the 1/L prefactor of the local
    stiffness; the first index is the coordinate being varied.
    """
    T, C, S = transformation(x1, y1, x2, y2)
    L = math.hypot(x2 - x1, y2 - y1)
    kbar = local_stiffness(e_mod, area, L)
    dL = np.array([-C, -S, C, S])
    dC = np.array([-S * S, C * S, S * S, -C * S]) / L
    dS = np.array([C * S, -C * C, -C * S, C * C]) / L
    out = np.empty((4, 4, 4))
    for k in range(4):
        dT = np.array([
            [dC[k], dS[k], 0.0, 0.0],
            [-dS[k], dC[k], 0.0, 0.0],
            [0.0, 0.0, dC[k], dS[k]],
            [0.0, 0.0, -dS[k], dC[k]],
        ])
        dkbar = (-dL[k] / L) * kbar
        out[k] = dT.T @ kbar @ T + T.T @ dkbar @ T + T.T @ kbar @ dT
    return out


@dataclass
class SpreadMap:
    """Normalized stiffness-spreading weights for one truss node."""

    node_ids: np.ndarray  # continuum node indices, ascending
    weights: np.ndarray  # sums to 1
    dweights: np.ndarray  # (n, 2) derivative w.r.t. the truss node position


def spread_weights(point, mesh, radius, node_label="?") -> SpreadMap:
    """Raised-cosine weights over continuum nodes within the spreading radius.

    Raw weight 0.5 cos(pi d / r) + 0.5 for d <= r (zero outside), normalized so
    the weights sum to exactly 1. Both the raw weight and its gradient vanish
    at d = r, so the map is C^1 in the node position.
    """
    px, py = float(point[0]), float(point[1])
    h = mesh.element_size
    ix_lo = max(0, int(math.ceil((px - radius) / h - 1e-12)))
    ix_hi = min(mesh.nx, int(math.floor((px + radius) / h + 1e-12)))
    iy_lo = max(0, int(math.ceil((py - radius) / h - 1e-12)))
    iy_hi = min(mesh.ny, int(math.floor((py + radius) / h + 1e-12)))
    ids, raw, draw = [], [], []
    for ix in range(ix_lo, ix_hi + 1):
        for iy in range(iy_lo, iy_hi + 1):
            qx, qy = ix * h, iy * h
            d = math.hypot(px - qx, py - qy)
            if d > radius:
                continue
            w = 0.5 * math.cos(math.pi * d / radius) + 0.5
            if w <= 0.0:
                continue
            if d == 0.0:
                g = (0.0, 0.0)
            else:
                factor = -0.5 * math.sin(math.pi * d / radius) * (math.pi / radius) / d
                g = (factor * (px - qx), factor * (py - qy))
            ids.append(ix * (mesh.ny + 1) + iy)
            raw.append(w)
            draw.append(g)
    if not ids:
        raise IsolatedNodeError(f"truss node {node_label} at ({px:g}, {py:g}) has no continuum node within r={radius:g}")
    ids = np.array(ids, dtype=np.intp)
    raw = np.array(raw)
    draw = np.array(draw)
    total = raw.sum()
    w = raw / total
    dtotal = draw.sum(axis=0)
    dw = draw / total - np.outer(raw, dtotal) / total**2
    return SpreadMap(node_ids=ids, weights=w, dweights=dw)


def couple_to_continuum(ke, map_a: SpreadMap, map_b: SpreadMap):
    """COO triples of N~^T K_e N~ for one member (rows, cols, vals)."""
    maps = (map_a, map_a, map_b, map_b)
    comps = (0, 1, 0, 1)
    rows, cols, vals = [], [], []
    for alpha in range(4):
        dofs_a = 2 * maps[alpha].node_ids + comps[alpha]
        wa = maps[alpha].weights
        for beta in range(4):
            kab = ke[alpha, beta]
            if kab == 0.0:
                continue
            dofs_b = 2 * maps[beta].node_ids + comps[beta]
            wb = maps[beta].weights
            block = np.outer(wa, wb) * kab
            rows.append(np.repeat(dofs_a, len(dofs_b)))
            cols.append(np.tile(dofs_b, len(dofs_a)))
            vals.append(block.ravel())
    return np.concatenate(rows), np.concatenate(cols), np.concatenate(vals)


def interpolated_member_disp(u, map_a: SpreadMap, map_b: SpreadMap) -> np.ndarray:
    """Member end displacements [ax, ay, bx, by] interpolated from the continuum."""
    ua = u[2 * map_a.node_ids]
    va = u[2 * map_a.node_ids + 1]
    ub = u[2 * map_b.node_ids]
    vb = u[2 * map_b.node_ids + 1]
    return np.array([
        map_a.weights @ ua,
        map_a.weights @ va,
        map_b.weights @ ub,
        map_b.weights @ vb,
    ])


def member_elongation(ut, C, S) -> float:
    """Axial elongation of the member under end displacements ut."""
    return (ut[2] - ut[0]) * C + (ut[3] - ut[1]) * S


@dataclass
class MemberState:
    """Geometry, coupling maps and frozen modulus for one member."""

    a: int
    b: int
    area: float
    length: float
    C: float
    S: float
    map_a: SpreadMap
    map_b: SpreadMap
    e_mod: float = 0.0  # assigned by the force-dependent loop


def build_member_states(positions, members, mesh, radius, eps_len) -> list[MemberState]:
    node_maps = {}
    for idx in sorted({n for a, b, _ in members for n in (a, b)}):
        node_maps[idx] = spread_weights(positions[idx], mesh, radius, node_label=str(idx))
    states = []
    for f, (a, b, area) in enumerate(members):
        x1, y1 = positions[a]
        x2, y2 = positions[b]
        try:
            _, C, S = transformation(x1, y1, x2, y2, eps_len)
        except ZeroLengthMemberError as exc:
            exc.member = f
            raise
        states.append(MemberState(
            a=a, b=b, area=area,
            length=math.hypot(x2 - x1, y2 - y1),
            C=C, S=S, map_a=node_maps[a], map_b=node_maps[b],
        ))
    return states


def member_unit_stiffness(st: MemberState) -> np.ndarray:
    g = np.array([-st.C, -st.S, st.C, st.S])
    return (st.e_mod * st.area / st.length) * np.outer(g, g)


def assemble_truss_coo(states: list[MemberState], scales: np.ndarray):
    """Stack the spread-coupled stiffness of every member, scaled by its sizing."""
    rows, cols, vals = [], [], []
    for st, scale in zip(states, scales):
        if scale == 0.0:
            continue
        r, c, v = couple_to_continuum(member_unit_stiffness(st) * scale, st.map_a, st.map_b)
        rows.append(r)
        cols.append(c)
        vals.append(v)
    if not rows:
        return np.array([], dtype=np.intp), np.array([], dtype=np.intp), np.array([])
    return np.concatenate(rows), np.concatenate(cols), np.concatenate(vals)


def member_energies(states: list[MemberState], u: np.ndarray) -> np.ndarray:
    """u_t^T K_e(unit sizing) u_t for every member under continuum displacements u."""
    out = np.zeros(len(states))
    for f, st in enumerate(states):
        ut = interpolated_member_disp(u, st.map_a, st.map_b)
        delta = member_elongation(ut, st.C, st.S)
        out[f] = (st.e_mod * st.area / st.length) * delta * delta
    return out


def sizing_sensitivity(states: list[MemberState], u: np.ndarray, dscale: np.ndarray) -> np.ndarray:
    """dc/dx_t per member for the frozen material state (always <= 0)."""
    return -dscale * member_energies(states, u)


def node_position_sensitivity(states, scales, u, n_truss_nodes, positions) -> np.ndarray:
    """dc/d(node coordinates) summed over attached members, shape (n, 2).

    Includes both the member-geometry term (rotation and length derivatives)
    and the motion of the spreading weights with the node.
    """
    grad = np.zeros((n_truss_nodes, 2))
    for st, scale in zip(states, scales):
        if scale == 0.0:
            continue
        x1, y1 = positions[st.a]
        x2, y2 = positions[st.b]
        ut = interpolated_member_disp(u, st.map_a, st.map_b)
        ke = member_unit_stiffness(st)
        dke = stiffness_position_derivatives(st.e_mod, st.area, x1, y1, x2, y2)
        geo = np.array([ut @ dke[k] @ ut for k in range(4)])
        grad[st.a] += -scale * geo[0:2]
        grad[st.b] += -scale * geo[2:4]
        ku = ke @ ut
        for node, mp, rows in ((st.a, st.map_a, (0, 1)), (st.b, st.map_b, (2, 3))):
            ux = u[2 * mp.node_ids]
            uy = u[2 * mp.node_ids + 1]
            dut_x = mp.dweights.T @ ux  # (2,) d u_t[rows[0]] / d(px, py)
            dut_y = mp.dweights.T @ uy
            grad[node] += -scale * 2.0 * (ku[rows[0]] * dut_x + ku[rows[1]] * dut_y)
    return grad


def steel_volume(states: list[MemberState], x_t: np.ndarray) -> float:
    return float(sum(x * st.area * st.length for x, st in zip(x_t, states)))


def steel_volume_position_gradient(states, x_t, n_truss_nodes) -> np.ndarray:
    """d(steel volume)/d(node coordinates); lengths change as nodes move."""
    grad = np.zeros((n_truss_nodes, 2))
    for st, x in zip(states, x_t):
        dL = np.array([-st.C, -st.S, st.C, st.S]) * (x * st.area)
        grad[st.a] += dL[0:2]
        grad[st.b] += dL[2:4]
    return grad


def split_members(positions, lo, hi, members, x_t, *, split_min_length, eps_len,
                  xy_ratio, envelope, log=None):
    """Halve every member longer than split_min_length at its current midpoint.

    The new midpoint node gets the average of its parents' move boxes, with its
    x freedom capped at xy_ratio times its y freedom so later splits keep nodes
    from stacking horizontally; boxes are clipped to the envelope and shrunk
    until no member can collapse to zero length. Steel volume at the current
    sizing is preserved exactly.
    """
    positions = [np.array(p, dtype=float) for p in positions]
    lo = [np.array(p, dtype=float) for p in lo]
    hi = [np.array(p, dtype=float) for p in hi]
    new_members, new_xt = [], []
    split_count = 0
    env_lo = np.zeros(2)
    env_hi = np.asarray(envelope, dtype=float)
    for f, (a, b, area) in enumerate(members):
        length = float(np.hypot(*(positions[b] - positions[a])))
        if length <= split_min_length:
            new_members.append((a, b, area))
            new_xt.append(x_t[f])
            continue
        if 0.5 * length <= eps_len:
            if log is not None:
                log.warning("split of member %d skipped: half-length %g below %g", f, 0.5 * length, eps_len)
            new_members.append((a, b, area))
            new_xt.append(x_t[f])
            continue
        mid = 0.5 * (positions[a] + positions[b])
        mlo = 0.5 * (lo[a] + lo[b])
        mhi = 0.5 * (hi[a] + hi[b])
        half = 0.5 * (mhi - mlo)
        half[0] = min(half[0], xy_ratio * half[1])
        mlo = np.maximum(mid - half, env_lo)
        mhi = np.minimum(mid + half, env_hi)
        for _ in range(60):
            if (min_box_distance(mlo, mhi, lo[a], hi[a]) > eps_len
                    and min_box_distance(mlo, mhi, lo[b], hi[b]) > eps_len):
                break
            mlo = 0.5 * (mlo + mid)
            mhi = 0.5 * (mhi + mid)
        m = len(positions)
        positions.append(mid)
        lo.append(mlo)
        hi.append(mhi)
        new_members.append((a, m, area))
        new_members.append((m, b, area))
        new_xt.extend([x_t[f], x_t[f]])
        split_count += 1
    return (np.array(positions), np.array(lo), np.array(hi),
            new_members, np.array(new_xt), split_count)
