"""Force-dependent stiffness: tension/compression moduli from the current field.

Each outer optimization step starts with an inner fixed-point loop: solve,
read principal stresses at every Gauss point (and axial force in every truss
member), reassign directional moduli from their signs, and repeat until the
labeling is stationary. A stationary labeling is self-consistent by
construction: re-deriving the labels from the final displacement field
reproduces them exactly. If the loop cycles, the tension/compression stiffness
ratio is lowered by a fixed decrement (continuation) and the loop restarts.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import fea
from .truss import assemble_truss_coo, interpolated_member_disp, member_elongation

log = logging.getLogger(__name__)


class InnerLoopError(RuntimeError):
    def __init__(self, msg, report=None):
        super().__init__(msg)
        self.report = report


@dataclass
class StiffnessAssignment:
    """Per-Gauss-point directional moduli and per-member modulus."""

    e1: np.ndarray  # (nel, 4)
    e2: np.ndarray
    nu1: np.ndarray
    theta: np.ndarray
    tension1: np.ndarray  # bool labels, direction 1
    tension2: np.ndarray
    member_e: np.ndarray  # (n_members,)
    member_tension: np.ndarray  # bool
    ratio: float
    _d_cache: np.ndarray | None = field(default=None, repr=False)

    def d_matrices(self) -> np.ndarray:
        if self._d_cache is None:
            self._d_cache = build_d_batch(self.e1, self.e2, self.nu1, self.theta)
        return self._d_cache

    def labels_equal(self, other: "StiffnessAssignment") -> bool:
        return (np.array_equal(self.tension1, other.tension1)
                and np.array_equal(self.tension2, other.tension2)
                and np.array_equal(self.member_tension, other.member_tension))

    def switched_count(self, other: "StiffnessAssignment") -> int:
        gp = np.count_nonzero(self.tension1 != other.tension1) + np.count_nonzero(self.tension2 != other.tension2)
        return int(gp + np.count_nonzero(self.member_tension != other.member_tension))

    def moduli_equal(self, other: "StiffnessAssignment") -> bool:
        return (np.array_equal(self.d_matrices(), other.d_matrices())
                and np.array_equal(self.member_e, other.member_e))


@dataclass
class InnerLoopReport:
    """Objective trace of one inner loop (one row per FE solve)."""

    compliance: list[float] = field(default_factory=list)
    switched: list[int] = field(default_factory=list)
    converged: bool = False
    final_ratio: float = 0.0

    @property
    def iterations(self) -> int:
        return len(self.compliance)

    def rows(self):
        """(iteration, compliance, switched) rows for CSV export."""
        return [(i + 1, c, s) for i, (c, s) in enumerate(zip(self.compliance, self.switched))]


def build_d_batch(e1, e2, nu1, theta) -> np.ndarray:
    """Constitutive matrices for arrays of Gauss-point moduli, shape (..., 3, 3).

    Isotropic points (e1 == e2) skip the rotation entirely so that equal-moduli
    assignments stay bit-identical regardless of the stored angle.
    """
    nu2 = nu1 * e2 / e1
    f = 1.0 / (1.0 - nu1 * nu2)
    g_inv = 1.0 / ((1.0 + nu1) / e1 + (1.0 + nu2) / e2)
    D = np.zeros(e1.shape + (3, 3))
    D[..., 0, 0] = f * e1
    D[..., 0, 1] = f * nu1 * e2
    D[..., 1, 0] = f * nu1 * e2
    D[..., 1, 1] = f * e2
    D[..., 2, 2] = g_inv
    aniso = (e1 != e2) & (theta != 0.0)
    if np.any(aniso):
        th = theta[aniso]
        c, s = np.cos(th), np.sin(th)
        cc, ss, cs = c * c, s * s, c * s
        k = len(th)
        ts_neg = np.empty((k, 3, 3))
        ts_neg[:, 0] = np.stack([cc, ss, -2 * cs], axis=1)
        ts_neg[:, 1] = np.stack([ss, cc, 2 * cs], axis=1)
        ts_neg[:, 2] = np.stack([cs, -cs, cc - ss], axis=1)
        te = np.empty((k, 3, 3))
        te[:, 0] = np.stack([cc, ss, cs], axis=1)
        te[:, 1] = np.stack([ss, cc, -cs], axis=1)
        te[:, 2] = np.stack([-2 * cs, 2 * cs, cc - ss], axis=1)
        dg = ts_neg @ D[aniso] @ te
        D[aniso] = 0.5 * (dg + dg.transpose(0, 2, 1))
    return D


def tension_moduli(bm, ratio: float) -> tuple[float, float]:
    """Continuum tension modulus and Poisson ratio at the given stiffness ratio.

    At the continuation floor the configured literal values are used so the
    final moduli are exact (e.g. 4.5 / 0.0075 rather than 180 * 0.025).
    """
    et = bm.e_comp * ratio
    nut = bm.nu_comp * ratio
    if abs(et - bm.e_tens) <= 1e-9 * abs(bm.e_tens):
        et = bm.e_tens
    if abs(nut - bm.nu_tens) <= 1e-9 * abs(bm.nu_tens):
        nut = bm.nu_tens
    return et, nut


def all_compression(nel: int, n_members: int, bm, ratio: float) -> StiffnessAssignment:
    """Initial state: stiff isotropic continuum, compression-soft members."""
    shape = (nel, 4)
    return StiffnessAssignment(
        e1=np.full(shape, bm.e_comp),
        e2=np.full(shape, bm.e_comp),
        nu1=np.full(shape, bm.nu_comp),
        theta=np.zeros(shape),
        tension1=np.zeros(shape, dtype=bool),
        tension2=np.zeros(shape, dtype=bool),
        member_e=np.full(n_members, bm.truss_e_comp),
        member_tension=np.zeros(n_members, dtype=bool),
        ratio=ratio,
    )


def assign_from_field(mesh, system, current: StiffnessAssignment, states, bm, ratio) -> StiffnessAssignment:
    """Relabel every Gauss point and member from the solved displacement field."""
    _, s1, s2, theta = fea.gauss_stresses(mesh, system.d, current.d_matrices())
    t1 = s1 >= 0.0
    t2 = s2 >= 0.0
    et, nut = tension_moduli(bm, ratio)
    e1 = np.where(t1, et, bm.e_comp)
    nu1 = np.where(t1, nut, bm.nu_comp)
    e2 = np.where(t2, et, bm.e_comp)
    member_t = np.zeros(len(states), dtype=bool)
    member_e = np.full(len(states), bm.truss_e_comp)
    for f, st in enumerate(states):
        ut = interpolated_member_disp(system.d, st.map_a, st.map_b)
        if member_elongation(ut, st.C, st.S) >= 0.0:
            member_t[f] = True
            member_e[f] = bm.truss_e_tens
    return StiffnessAssignment(
        e1=e1, e2=e2, nu1=nu1, theta=theta,
        tension1=t1, tension2=t2,
        member_e=member_e, member_tension=member_t, ratio=ratio,
    )


def apply_continuation(bm, ratio: float) -> float:
    """Lower the tension/compression ratio by one fixed decrement (never below floor).

    The new value is recomputed from the step count so repeated applications
    land on the floor exactly.
    """
    k = int(round((bm.ratio_start - ratio) / bm.ratio_step)) + 1
    new = bm.ratio_start - k * bm.ratio_step
    if new <= bm.ratio_floor + 1e-12 * max(1.0, abs(bm.ratio_floor)):
        return bm.ratio_floor
    return new


def _solve_with(mesh, F, fixed, scale_c, thickness, states, scale_t, assignment):
    ke = fea.element_stiffness_batch(assignment.d_matrices(), mesh.element_size, thickness)
    ke *= scale_c[:, None, None]
    for f, st in enumerate(states):
        st.e_mod = assignment.member_e[f]
    coo = assemble_truss_coo(states, scale_t) if states else None
    K = fea.assemble(mesh, ke, coo)
    return fea.solve(K, F, fixed)


def _oscillating(trace, tol):
    if len(trace) < 4:
        return False
    c = trace[-1]
    ref = max(abs(c), 1e-300)
    return abs(c - trace[-3]) / ref < 1e-6 and abs(c - trace[-2]) / ref > tol


def run_inner_loop(mesh, bcs, F, scale_c, thickness, states, scale_t, bm,
                   ratio, warm: StiffnessAssignment | None = None):
    """Iterate moduli assignment to a stationary labeling, with continuation.

    Returns (GlobalSystem, StiffnessAssignment, InnerLoopReport, final_ratio).
    The returned assignment's labels are exactly those derived from the
    returned displacement field. When the force-dependent behavior is disabled
    the all-compression solve is returned directly.
    """
    nel = mesh.n_elements
    if not bm.enabled:
        assignment = all_compression(nel, len(states), bm, ratio)
        system = _solve_with(mesh, F, bcs.fixed_dofs, scale_c, thickness, states, scale_t, assignment)
        report = InnerLoopReport(compliance=[system.compliance], switched=[0], converged=True, final_ratio=ratio)
        return system, assignment, report, ratio

    while True:
        assignment = warm if warm is not None else all_compression(nel, len(states), bm, ratio)
        if assignment.ratio != ratio:
            assignment = _with_ratio(assignment, bm, ratio)
        report = InnerLoopReport(final_ratio=ratio)
        system = _solve_with(mesh, F, bcs.fixed_dofs, scale_c, thickness, states, scale_t, assignment)
        report.compliance.append(system.compliance)
        report.switched.append(0)
        converged = False
        for _ in range(bm.inner_cap - 1):
            new = assign_from_field(mesh, system, assignment, states, bm, ratio)
            switched = new.switched_count(assignment)
            if switched == 0:
                converged = True
                break
            if new.moduli_equal(assignment):
                # labels moved but the stiffness did not (equal moduli); adopt
                # the relabeling, the field is already consistent with it
                assignment = new
                converged = True
                break
            assignment = new
            system = _solve_with(mesh, F, bcs.fixed_dofs, scale_c, thickness, states, scale_t, assignment)
            report.compliance.append(system.compliance)
            report.switched.append(switched)
            if _oscillating(report.compliance, bm.inner_tol):
                break
        if converged:
            report.converged = True
            report.final_ratio = ratio
            return system, assignment, report, ratio
        if ratio > bm.ratio_floor:
            new_ratio = apply_continuation(bm, ratio)
            log.info("inner loop did not settle at ratio %g; continuing at %g", ratio, new_ratio)
            ratio = new_ratio
            warm = assignment  # re-expressed at the new ratio on re-entry
            continue
        raise InnerLoopError(
            f"inner loop failed to converge at the ratio floor {bm.ratio_floor} "
            f"after {report.iterations} iterations", report)


def _with_ratio(assignment: StiffnessAssignment, bm, ratio: float) -> StiffnessAssignment:
    """Re-express a warm-start assignment at a new continuation ratio."""
    et, nut = tension_moduli(bm, ratio)
    return StiffnessAssignment(
        e1=np.where(assignment.tension1, et, bm.e_comp),
        e2=np.where(assignment.tension2, et, bm.e_comp),
        nu1=np.where(assignment.tension1, nut, bm.nu_comp),
        theta=assignment.theta.copy(),
        tension1=assignment.tension1.copy(),
        tension2=assignment.tension2.copy(),
        member_e=assignment.member_e.copy(),
        member_tension=assignment.member_tension.copy(),
        ratio=ratio,
    )
