"""Outer optimization loop: compliance minimization over densities, truss sizing
and truss node positions, under concrete and steel volume budgets.

Two modes share the machinery. Binary mode penalizes intermediate densities
(power law) and projects them toward 0/1 with a sharpening schedule; the
density field is read as an extruded 2D shape. VTS mode leaves densities
unpenalized except for a smooth minimum-thickness knee and reads them as
out-of-plane thicknesses, halving truss members on a schedule so material can
distribute along the reinforcement.

Sensitivities are evaluated with the force-dependent moduli frozen at the
inner loop's converged state (staggered scheme); the label switching itself is
not differentiated.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import bimodulus, fea, mma, truss
from .domain import Problem
from .filters import FilterChain

log = logging.getLogger(__name__)


def simp_stiffness_scale(rho, p, floor=1e-9):
    """Power-law stiffness interpolation; returns (scale, dscale/drho)."""
    rho = np.asarray(rho, dtype=float)
    scale = floor + rho**p * (1.0 - floor)
    dscale = p * rho ** (p - 1.0) * (1.0 - floor)
    return scale, dscale


def vts_thickness_penalty(x, m, c):
    """Smooth minimum-thickness interpolation y = x / (1 + exp((-x + m) c)).

    Near-zero below the knee m, nearly linear above it; returns (y, dy/dx).
    """
    x = np.asarray(x, dtype=float)
    s = 1.0 / (1.0 + np.exp((-x + m) * c))
    y = x * s
    dy = s + x * s * (1.0 - s) * c
    return y, dy


@dataclass
class VtsThicknessField:
    thickness: np.ndarray  # per element
    sub_minimum: np.ndarray  # bool, flagged for the export layer
    t_max: float


def interpret_vts(rho, t_max, report_threshold=0.1) -> VtsThicknessField:
    """Read physical densities linearly as out-of-plane thicknesses."""
    rho = np.asarray(rho, dtype=float)
    return VtsThicknessField(thickness=rho * t_max, sub_minimum=rho < report_threshold, t_max=t_max)


@dataclass
class IterationRecord:
    outer: int
    compliance: float
    vol_c_frac: float  # used / budget
    vol_t_frac: float
    max_change: float
    inner_iterations: int
    ratio: float
    beta: float
    split_count: int
    objective_increased: bool

    HEADER = ("outer", "compliance", "vol_c_frac", "vol_t_frac", "max_change",
              "inner_iterations", "ratio", "beta", "split_count", "objective_increased")

    def row(self):
        return (self.outer, self.compliance, self.vol_c_frac, self.vol_t_frac,
                self.max_change, self.inner_iterations, self.ratio, self.beta,
                self.split_count, int(self.objective_increased))


@dataclass
class RunResult:
    problem: Problem
    x_c: np.ndarray
    rho: np.ndarray  # physical densities
    x_t: np.ndarray
    members: list
    node_positions: np.ndarray
    compliance: float
    records: list[IterationRecord]
    inner_rows: list[tuple]  # (outer, inner, compliance, switched)
    converged: bool
    vts_field: VtsThicknessField | None = None


class OuterLoop:
    """Holds all mutable optimization state; one instance per run."""

    def __init__(self, problem: Problem):
        self.problem = problem
        mesh, run = problem.mesh, problem.run
        self.mesh = mesh
        self.run = run
        self.bm = run.bimodulus
        self.F = problem.bcs.load_vector(mesh.dof_count)
        self.chain = FilterChain(mesh, run.filter_radius,
                                 heaviside=(run.mode == "binary" and run.heaviside_enabled),
                                 eta=run.heaviside_eta)
        self.elem_volume = mesh.element_size**2 * run.thickness

        gs = problem.ground
        self.positions_lo = gs.bounds_lo.copy()
        self.positions_hi = gs.bounds_hi.copy()
        self.members = list(gs.members)
        self.x_c = np.full(mesh.n_elements, run.initial_density)
        self.x_t = np.full(len(self.members), run.initial_sizing)
        rng = self.positions_hi - self.positions_lo
        with np.errstate(invalid="ignore", divide="ignore"):
            xp = np.where(rng > 0, (gs.nodes - self.positions_lo) / np.where(rng > 0, rng, 1.0), 0.5)
        self.x_p = xp

        self.mma_state = mma.MmaState()
        self.ratio = self.bm.ratio_start if self.bm.enabled else self.bm.ratio_floor
        self.beta_idx = 0
        self.split_total = 0
        self.splits_done = run.mode != "vts" or not self.members
        self.warm = None
        self.it = 0
        self._last_ratio_adv = 0
        self._last_beta_adv = 0
        self._last_split = 0
        self._prev_compliance = None
        self.records: list[IterationRecord] = []
        self.inner_rows: list[tuple] = []
        self.compliance = np.nan
        self.rho = None

    # -- helpers ----------------------------------------------------------

    @property
    def beta(self) -> float:
        if self.run.mode != "binary" or not self.run.heaviside_enabled:
            return 0.0
        return float(self.run.beta_schedule[self.beta_idx])

    def node_positions(self) -> np.ndarray:
        rng = self.positions_hi - self.positions_lo
        return self.positions_lo + self.x_p * rng

    def _stiffness_scales(self, rho):
        if self.run.mode == "binary":
            return simp_stiffness_scale(rho, self.run.simp_penalty, self.run.simp_floor)
        y, dy = vts_thickness_penalty(rho, self.run.vts_m, self.run.vts_c)
        floor = self.run.simp_floor
        return floor + (1.0 - floor) * y, (1.0 - floor) * dy

    def _sizing_scales(self, x_t):
        if self.run.mode == "vts":
            return vts_thickness_penalty(x_t, self.run.vts_m, self.run.vts_c)
        return x_t.copy(), np.ones_like(x_t)

    def _pack(self):
        return np.concatenate([self.x_c, self.x_t, self.x_p.ravel()])

    def _unpack(self, xfull):
        nel = self.mesh.n_elements
        nm = len(self.members)
        x_c = xfull[:nel]
        x_t = xfull[nel:nel + nm]
        x_p = xfull[nel + nm:].reshape(-1, 2)
        return x_c, x_t, x_p

    def _move_limits(self):
        nel = self.mesh.n_elements
        nm = len(self.members)
        npos = 2 * len(self.positions_lo)
        return np.concatenate([
            np.full(nel, self.run.move_limit_density),
            np.full(nm, self.run.move_limit_sizing),
            np.full(npos, self.run.move_limit_position),
        ])

    def concrete_volume(self, rho) -> float:
        return float(rho.sum() * self.elem_volume)

    # -- one outer iteration ----------------------------------------------

    def step(self) -> IterationRecord:
        self.it += 1
        mesh, run, bm = self.mesh, self.run, self.bm
        # projection sharpening (and the initial uniform fill) can push the
        # nonlinear volumes over budget; start every step from a feasible point
        # so the move-limited subproblem always has one too
        self.x_c, self.x_t = self._restore_feasibility(self.x_c, self.x_t, self.x_p)
        positions = self.node_positions()
        states = truss.build_member_states(positions, self.members, mesh,
                                           run.ssm_radius, run.min_member_length)
        rho = self.chain.forward(self.x_c, beta=self.beta)
        scale_c, dscale_c = self._stiffness_scales(rho)
        scale_t, dscale_t = self._sizing_scales(self.x_t)

        system, assignment, report, self.ratio = bimodulus.run_inner_loop(
            mesh, self.problem.bcs, self.F, scale_c, run.thickness,
            states, scale_t, bm, self.ratio, warm=self.warm)
        self.warm = assignment
        c = system.compliance
        for row in report.rows():
            self.inner_rows.append((self.it,) + row)

        # frozen-state sensitivities
        eps = fea.gauss_strains(mesh, system.d)
        gp_scale = (mesh.element_size**2 / 4.0) * run.thickness
        elem_energy = np.einsum("ngi,ngij,ngj->n", eps, assignment.d_matrices(), eps,
                                optimize=True) * gp_scale
        dc_drho = -dscale_c * elem_energy
        dc_dxc = self.chain.backprop(dc_drho)
        dc_dxt = truss.sizing_sensitivity(states, system.d, dscale_t)
        pos_rng = self.positions_hi - self.positions_lo
        dc_dxp = truss.node_position_sensitivity(states, scale_t, system.d,
                                                 len(self.positions_lo), positions) * pos_rng

        vol_c = self.concrete_volume(rho)
        vol_t = truss.steel_volume(states, self.x_t)
        g = np.array([vol_c / run.v_c_max - 1.0, vol_t / run.v_t_max - 1.0])
        dg_c = self.chain.backprop(np.full(mesh.n_elements, self.elem_volume)) / run.v_c_max
        dg_t = np.array([st.area * st.length for st in states]) / run.v_t_max
        dg_p = truss.steel_volume_position_gradient(states, self.x_t, len(self.positions_lo))
        dg_p = dg_p * pos_rng / run.v_t_max
        n = mesh.n_elements + len(self.members) + 2 * len(self.positions_lo)
        dg = np.zeros((2, n))
        dg[0, :mesh.n_elements] = dg_c
        dg[1, mesh.n_elements:mesh.n_elements + len(self.members)] = dg_t
        dg[1, mesh.n_elements + len(self.members):] = dg_p.ravel()

        df0 = np.concatenate([dc_dxc, dc_dxt, dc_dxp.ravel()])
        x = self._pack()
        x_new, self.mma_state, _ = mma.mma_step(
            x, c, df0, g, dg, 0.0, 1.0, self.mma_state, move=self._move_limits())

        x_c_new, x_t_new, x_p_new = self._unpack(x_new)
        x_c_new, x_t_new = self._restore_feasibility(x_c_new, x_t_new, x_p_new)
        max_change = float(np.max(np.abs(x_new - x))) if x.size else 0.0
        self.x_c, self.x_t, self.x_p = x_c_new.copy(), x_t_new.copy(), x_p_new.copy()

        # bookkeeping with the accepted iterate
        rho_acc = self.chain.forward(self.x_c, beta=self.beta)
        self.rho = rho_acc
        positions_acc = self.node_positions()
        states_acc = truss.build_member_states(positions_acc, self.members, mesh,
                                               run.ssm_radius, run.min_member_length)
        vol_c_acc = self.concrete_volume(rho_acc)
        vol_t_acc = truss.steel_volume(states_acc, self.x_t)
        increased = self._prev_compliance is not None and c > self._prev_compliance
        self._prev_compliance = c
        self.compliance = c
        rec = IterationRecord(
            outer=self.it, compliance=c,
            vol_c_frac=vol_c_acc / run.v_c_max, vol_t_frac=vol_t_acc / run.v_t_max,
            max_change=max_change, inner_iterations=report.iterations,
            ratio=self.ratio, beta=self.beta, split_count=self.split_total,
            objective_increased=increased)
        self.records.append(rec)
        return rec

    # -- feasibility restoration -------------------------------------------

    def _restore_feasibility(self, x_c, x_t, x_p):
        """Scale the new iterate back onto the volume budgets if the projected
        (nonlinear) volumes overshoot; both maps are monotone in the scaling."""
        run = self.run
        cap_c = run.v_c_max * (1.0 + 1e-9)
        rho = self.chain.apply(x_c, self.beta)
        if self.concrete_volume(rho) > cap_c:
            lo, hi = 0.0, 1.0
            for _ in range(70):
                mid = 0.5 * (lo + hi)
                if self.concrete_volume(self.chain.apply(mid * x_c, self.beta)) <= run.v_c_max:
                    lo = mid
                else:
                    hi = mid
            x_c = lo * x_c
        rng = self.positions_hi - self.positions_lo
        positions = self.positions_lo + x_p * rng
        lengths = np.array([np.hypot(*(positions[b] - positions[a])) for a, b, _ in self.members])
        areas = np.array([area for _, _, area in self.members])
        vol_t = float(np.sum(x_t * areas * lengths))
        if vol_t > run.v_t_max * (1.0 + 1e-9):
            x_t = x_t * (run.v_t_max / vol_t) * (1.0 - 1e-12)
        return x_c, x_t

    # -- schedules and termination ------------------------------------------

    def _advance_schedules(self, converged_now: bool) -> bool:
        """Move the continuation/projection/split schedules along.

        Each schedule advances on its own cadence; a converged iterate kicks
        the first unfinished schedule forward (stiffness ratio before
        projection sharpening / member splitting). Returns True only when all
        schedules are final, so the max-change test is applied to the final
        problem only.
        """
        run, bm = self.run, self.bm
        ratio_final = not bm.enabled or self.ratio <= bm.ratio_floor
        beta_final = (run.mode != "binary" or not run.heaviside_enabled
                      or self.beta_idx >= len(run.beta_schedule) - 1)
        splits_final = run.mode != "vts" or self.splits_done
        kick = converged_now
        if not ratio_final and (kick or self.it - self._last_ratio_adv >= bm.ratio_interval):
            self.ratio = bimodulus.apply_continuation(bm, self.ratio)
            self._last_ratio_adv = self.it
            kick = False
        if not beta_final and (kick or self.it - self._last_beta_adv >= run.beta_interval):
            self.beta_idx += 1
            self._last_beta_adv = self.it
            kick = False
        if not splits_final and (kick or self.it - self._last_split >= run.split_interval):
            self._split_members()
            self._last_split = self.it
        return ratio_final and beta_final and splits_final

    def _split_members(self):
        run = self.run
        positions = self.node_positions()
        envelope = (self.mesh.width, self.mesh.height)
        pos, lo, hi, members, x_t, count = truss.split_members(
            positions, self.positions_lo, self.positions_hi, self.members, self.x_t,
            split_min_length=run.split_min_length, eps_len=run.min_member_length,
            xy_ratio=run.split_xy_ratio, envelope=envelope, log=log)
        if count == 0:
            self.splits_done = True
            return
        self.split_total += count
        self.positions_lo, self.positions_hi, self.members, self.x_t = lo, hi, members, x_t
        rng = hi - lo
        self.x_p = np.where(rng > 0, (pos - lo) / np.where(rng > 0, rng, 1.0), 0.5)
        self.mma_state = mma.MmaState()  # problem size changed
        self.warm = None
        log.info("split %d members (total %d, now %d members)", count, self.split_total, len(members))

    def run_to_completion(self) -> RunResult:
        converged = False
        while self.it < self.run.max_outer:
            rec = self.step()
            converged_now = rec.max_change < self.run.change_tol
            if self._advance_schedules(converged_now) and converged_now:
                converged = True
                break
        return self._result(converged)

    def _result(self, converged: bool) -> RunResult:
        rho = self.rho if self.rho is not None else self.chain.forward(self.x_c, beta=self.beta)
        vts_field = None
        if self.run.mode == "vts":
            vts_field = interpret_vts(rho, self.run.thickness, self.run.vts_report_threshold)
        return RunResult(
            problem=self.problem, x_c=self.x_c.copy(), rho=rho.copy(), x_t=self.x_t.copy(),
            members=list(self.members), node_positions=self.node_positions(),
            compliance=self.compliance, records=list(self.records),
            inner_rows=list(self.inner_rows), converged=converged, vts_field=vts_field)


def outer_step(loop: OuterLoop) -> IterationRecord:
    """Advance one outer iteration (schedules included)."""
    rec = loop.step()
    loop._advance_schedules(rec.max_change < loop.run.change_tol)
    return rec


def run(problem: Problem) -> RunResult:
    """Optimize the problem to termination and return the final design + log."""
    return OuterLoop(problem).run_to_completion()


# ---------------------------------------------------------------------------
# frozen-state gradient verification


def check_gradients(problem: Problem, steps=(1e-4, 1e-5, 1e-6, 1e-7)):
    """Central finite-difference check of all three sensitivity families.

    The force-dependent state is frozen at the inner loop's converged
    assignment, the compliance is then a smooth function of the design and the
    analytic gradients must match. Returns {family: {"errors": {step: err},
    "best": err}} with err the max component-wise relative error (components
    below 1e-3 of the family's largest magnitude are compared against that
    threshold instead, so symmetric zeros do not blow up the quotient).
    """
    loop = OuterLoop(problem)
    mesh, run, bm = loop.mesh, loop.run, loop.bm
    positions = loop.node_positions()
    states = truss.build_member_states(positions, loop.members, mesh, run.ssm_radius, run.min_member_length)
    rho = loop.chain.forward(loop.x_c, beta=loop.beta)
    scale_c, dscale_c = loop._stiffness_scales(rho)
    scale_t, dscale_t = loop._sizing_scales(loop.x_t)
    system, assignment, _, _ = bimodulus.run_inner_loop(
        mesh, problem.bcs, loop.F, scale_c, run.thickness, states, scale_t, bm, loop.ratio)
    d_frozen = assignment.d_matrices()
    member_e = assignment.member_e

    eps = fea.gauss_strains(mesh, system.d)
    gp_scale = (mesh.element_size**2 / 4.0) * run.thickness
    elem_energy = np.einsum("ngi,ngij,ngj->n", eps, d_frozen, eps, optimize=True) * gp_scale
    dc_dxc = loop.chain.backprop(-dscale_c * elem_energy)
    dc_dxt = truss.sizing_sensitivity(states, system.d, dscale_t)
    pos_rng = loop.positions_hi - loop.positions_lo
    dc_dxp = (truss.node_position_sensitivity(states, scale_t, system.d,
                                              len(loop.positions_lo), positions) * pos_rng).ravel()

    def frozen_compliance(x_c, x_t, x_p_flat):
        rho_l = loop.chain.apply(x_c, loop.beta)
        sc, _ = loop._stiffness_scales(rho_l)
        st_scale, _ = loop._sizing_scales(x_t)
        pos = loop.positions_lo + x_p_flat.reshape(-1, 2) * pos_rng
        sts = truss.build_member_states(pos, loop.members, mesh, run.ssm_radius, run.min_member_length)
        for f, st in enumerate(sts):
            st.e_mod = member_e[f]
        ke = fea.element_stiffness_batch(d_frozen, mesh.element_size, run.thickness)
        ke *= sc[:, None, None]
        coo = truss.assemble_truss_coo(sts, st_scale) if sts else None
        K = fea.assemble(mesh, ke, coo)
        return fea.solve(K, loop.F, problem.bcs.fixed_dofs).compliance

    x_c0, x_t0, x_p0 = loop.x_c.copy(), loop.x_t.copy(), loop.x_p.ravel().copy()
    families = {
        "x_c": (x_c0, dc_dxc, lambda v: frozen_compliance(v, x_t0, x_p0)),
        "x_t": (x_t0, dc_dxt, lambda v: frozen_compliance(x_c0, v, x_p0)),
        "x_p": (x_p0, dc_dxp, lambda v: frozen_compliance(x_c0, x_t0, v)),
    }
    out = {}
    for name, (x0, grad, fn) in families.items():
        if x0.size == 0:
            out[name] = {"errors": {s: 0.0 for s in steps}, "best": 0.0}
            continue
        scale = max(np.max(np.abs(grad)), 1e-12)
        errors = {}
        for h in steps:
            worst = 0.0
            for j in range(x0.size):
                xp = x0.copy()
                xp[j] = x0[j] + h
                xm = x0.copy()
                xm[j] = x0[j] - h
                fd = (fn(xp) - fn(xm)) / (2.0 * h)
                denom = max(abs(grad[j]), 1e-3 * scale)
                worst = max(worst, abs(fd - grad[j]) / denom)
            errors[h] = worst
        out[name] = {"errors": errors, "best": min(errors.values())}
    return out
