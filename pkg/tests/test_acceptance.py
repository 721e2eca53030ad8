"""Acceptance suite: one test per criterion, each printing a PASS line.

Run with ``pytest tests/test_acceptance.py -v -s`` to see the per-criterion
lines. The beam-scale end-to-end run is shared between the volume-feasibility
and qualitative-layout criteria through a session fixture.
"""

import dataclasses
import filecmp
import os
import time

import numpy as np
import pytest

from rctopo import bimodulus, fea, optimizer, truss
from rctopo.cli import main
from rctopo.domain import build_problem

from conftest import beam_config
from oracles import oc_mbb_compliance

HERE = os.path.dirname(__file__)
CONFIGS = os.path.abspath(os.path.join(HERE, os.pardir, "configs"))


def report(criterion, ok, detail=""):
    tag = "PASS" if ok else "FAIL"
    print(f"[criterion {criterion}] {tag} {detail}")
    assert ok, f"criterion {criterion}: {detail}"


def read(path):
    with open(path) as f:
        return f.read()


# -- shared beam-scale run ---------------------------------------------------

CASE_STUDY = read(os.path.join(CONFIGS, "beam_binary.cfg")) \
    .replace("nx = 160", "nx = 96") \
    .replace("ny = 20", "ny = 12") \
    .replace("element_size = 0.762", "element_size = 1.27") \
    .replace("max_outer = 300", "max_outer = 200") \
    .replace("beta_interval = 20", "beta_interval = 15") \
    .replace("ratio_interval = 10", "ratio_interval = 8")


@pytest.fixture(scope="session")
def case_study():
    """Beam-scale binary run at the published budget fractions (96x12 mesh)."""
    t0 = time.monotonic()
    problem = build_problem(CASE_STUDY)
    result = optimizer.run(problem)
    return problem, result, time.monotonic() - t0


def test_criterion_1_gradient_correctness():
    problem = build_problem(read(os.path.join(CONFIGS, "tiny_gradcheck.cfg")))
    t0 = time.monotonic()
    rep = optimizer.check_gradients(problem, steps=(1e-4, 1e-5, 1e-6, 1e-7))
    elapsed = time.monotonic() - t0
    interior_v = 0
    for family in ("x_c", "x_t", "x_p"):
        errors = rep[family]["errors"]
        steps = sorted(errors, reverse=True)  # large step -> small step
        vals = [errors[h] for h in steps]
        best = min(vals)
        assert best < 1e-4, f"{family}: best FD error {best:.3e}"
        # right branch of the V: roundoff grows again at the smallest step
        assert vals[-1] > best, f"{family}: no roundoff growth visible"
        k = vals.index(best)
        if 0 < k < len(vals) - 1 and vals[k - 1] > best and vals[k + 1] > best:
            interior_v += 1
    assert interior_v >= 1, "no family shows the full V-curve"
    report(1, elapsed < 30.0, f"max rel errors "
           + ", ".join(f"{f}={rep[f]['best']:.2e}" for f in ("x_c", "x_t", "x_p"))
           + f"; V-curve on {interior_v} families; {elapsed:.1f}s")


def test_criterion_2_ssm_exactness():
    from rctopo.domain import Mesh

    mesh = Mesh(6, 4, 1.0)
    rng = np.random.RandomState(0)
    worst_pou = 0.0
    for _ in range(200):
        p = rng.uniform([0.05, 0.05], [5.95, 3.95])
        mp = truss.spread_weights(p, mesh, rng.uniform(0.6, 2.5))
        worst_pou = max(worst_pou, abs(mp.weights.sum() - 1.0))
    assert worst_pou <= 1e-12

    # coincident node with sub-edge radius reproduces classical assembly
    ke = truss.global_stiffness(5800.0, 1.0, 1.0, 1.0, 4.0, 2.0)
    map_a = truss.spread_weights((1.0, 1.0), mesh, 0.9)
    map_b = truss.spread_weights((4.0, 2.0), mesh, 0.9)
    rows, cols, vals = truss.couple_to_continuum(ke, map_a, map_b)
    K = np.zeros((mesh.dof_count, mesh.dof_count))
    np.add.at(K, (rows, cols), vals)
    ref = np.zeros_like(K)
    dofs = [2 * mesh.node_id(1, 1), 2 * mesh.node_id(1, 1) + 1,
            2 * mesh.node_id(4, 2), 2 * mesh.node_id(4, 2) + 1]
    for i in range(4):
        for j in range(4):
            ref[dofs[i], dofs[j]] += ke[i, j]
    assert np.array_equal(K, ref)

    # energy identity for spread (non-conforming) placements
    pa, pb = (1.37, 1.21), (4.62, 2.83)
    ke = truss.global_stiffness(5800.0, 1.3, *pa, *pb)
    map_a = truss.spread_weights(pa, mesh, 1.5)
    map_b = truss.spread_weights(pb, mesh, 1.5)
    rows, cols, vals = truss.couple_to_continuum(ke, map_a, map_b)
    worst_energy = 0.0
    for _ in range(50):
        u = rng.randn(mesh.dof_count)
        lhs = np.sum(vals * u[rows] * u[cols])
        ut = truss.interpolated_member_disp(u, map_a, map_b)
        rhs = ut @ ke @ ut
        worst_energy = max(worst_energy, abs(lhs - rhs) / max(abs(rhs), 1e-30))
    assert worst_energy <= 1e-10
    report(2, True, f"partition-of-unity {worst_pou:.1e}, coincident exact, "
           f"energy identity {worst_energy:.1e}")


def test_criterion_3_bimodulus_fixed_point():
    problem = build_problem(beam_config(nx=40, ny=10, ground=False, v_c_frac=1.0))
    loop = optimizer.OuterLoop(problem)
    scale_c, _ = loop._stiffness_scales(loop.chain.forward(loop.x_c, beta=loop.beta))
    bm = dataclasses.replace(problem.run.bimodulus, ratio_start=0.025)
    system, assignment, rep, ratio = bimodulus.run_inner_loop(
        problem.mesh, problem.bcs, loop.F, scale_c, 1.0, [], np.array([]), bm, 0.025)
    assert rep.converged and rep.iterations <= 50 and ratio == 0.025
    # exact self-consistency of the labels under the final field
    _, s1, s2, _ = fea.gauss_stresses(problem.mesh, system.d, assignment.d_matrices())
    assert np.array_equal(s1 >= 0.0, assignment.tension1)
    assert np.array_equal(s2 >= 0.0, assignment.tension2)

    bm1 = dataclasses.replace(problem.run.bimodulus, ratio_start=1.0, ratio_floor=1.0)
    sys1, _, rep1, _ = bimodulus.run_inner_loop(
        problem.mesh, problem.bcs, loop.F, scale_c, 1.0, [], np.array([]), bm1, 1.0)
    bm0 = dataclasses.replace(problem.run.bimodulus, enabled=False)
    sys0, _, _, _ = bimodulus.run_inner_loop(
        problem.mesh, problem.bcs, loop.F, scale_c, 1.0, [], np.array([]), bm0, 1.0)
    assert np.array_equal(sys1.d, sys0.d) and sys1.compliance == sys0.compliance
    report(3, True, f"converged in {rep.iterations} iterations at ratio 0.025; "
           f"labels exact; ratio-1 override bit-identical to plain FEA")


def test_criterion_4_mma_against_oc_oracle():
    t0 = time.monotonic()
    problem = build_problem(read(os.path.join(CONFIGS, "mbb_simp.cfg")))
    result = optimizer.run(problem)
    t_mma = time.monotonic() - t0
    t0 = time.monotonic()
    c_oc = oc_mbb_compliance(60, 20, 0.5, 2.4)
    t_oc = time.monotonic() - t0
    gap = abs(result.compliance - c_oc) / c_oc
    assert t_mma < 60.0 and t_oc < 60.0
    report(4, gap < 0.02, f"MMA compliance {result.compliance:.2f} vs OC {c_oc:.2f} "
           f"(gap {gap * 100:.2f}%), runtimes {t_mma:.0f}s / {t_oc:.0f}s")


def test_criterion_5_minimum_thickness_penalty():
    for m in (0.1, 0.3, 0.5):
        y, _ = optimizer.vts_thickness_penalty(m, m, 20.0)
        assert y == m / 2.0  # exact: the sigmoid denominator is exactly 2
    for m in np.linspace(0.05, 0.5, 8):
        for c in np.linspace(5.0, 100.0, 8):
            x = np.linspace(0.0, 1.0, 401)
            y, dy = optimizer.vts_thickness_penalty(x, m, c)
            assert np.all(np.diff(y) > -1e-15)
            assert np.all(dy > 0)
    for m in np.linspace(0.05, 0.5, 10):
        for c in (20.0, 40.0, 80.0):
            y1, _ = optimizer.vts_thickness_penalty(1.0, m, c)
            assert y1 >= 0.999
    report(5, True, "y(m) = m/2 exact; monotone on documented ranges; y(1) >= 0.999")


def test_criterion_6_volume_feasibility_and_discreteness(case_study):
    _, result, _ = case_study
    worst_c = max(r.vol_c_frac for r in result.records)
    worst_t = max(r.vol_t_frac for r in result.records)
    assert worst_c <= 1.0 + 1e-6 and worst_t <= 1.0 + 1e-6
    mnd = float(np.mean(4.0 * result.rho * (1.0 - result.rho)))
    report(6, mnd <= 0.05, f"worst volume fractions {worst_c:.8f} / {worst_t:.8f}; "
           f"non-discreteness {mnd:.4f}")


def test_criterion_7_aci_baselines(capsys):
    from rctopo import aci

    loads = {}
    for name, target in (("prismatic_57mm.sec", 13.5e3), ("envelope_76mm.sec", 19.2e3)):
        sec = aci.load_section(read(os.path.join(CONFIGS, name)))
        p = aci.three_point_design_load(sec)
        assert p == pytest.approx(target, rel=0.05)
        loads[name] = p / 1e3
    report(7, True, f"13.5 kN line -> {loads['prismatic_57mm.sec']:.2f} kN; "
           f"19.2 kN line -> {loads['envelope_76mm.sec']:.2f} kN (both within 5%)")


def test_criterion_8_qualitative_layout(case_study):
    problem, result, elapsed = case_study
    mesh = problem.mesh
    assert elapsed < 15 * 60.0
    assert result.converged

    # plain-FEA bending solution on the solid envelope
    loop = optimizer.OuterLoop(problem)
    D = fea.constitutive_global(180.0, 180.0, 0.3, 0.0)
    d_all = np.broadcast_to(D, (mesh.n_elements, 4, 3, 3))
    ke = fea.element_stiffness_batch(d_all, mesh.element_size, problem.run.thickness)
    system = fea.solve(fea.assemble(mesh, ke), loop.F, problem.bcs.fixed_dofs)
    sigma, _, _, _ = fea.gauss_stresses(mesh, system.d, d_all)
    bottom_sxx = np.array([sigma[mesh.element_id(ex, 0), :, 0].mean() for ex in range(mesh.nx)])

    # (a) every active member sits where the plain bottom fiber is tensile
    pos = result.node_positions
    active = [f for f in range(len(result.members)) if result.x_t[f] > 0.5]
    assert active, "no active truss members in the converged design"
    for f in active:
        a, b, _ = result.members[f]
        mid = 0.5 * (pos[a] + pos[b])
        col = min(mesh.nx - 1, int(mid[0] / mesh.element_size))
        assert bottom_sxx[col] > 0.0, f"member {f} midpoint over compressive bottom fiber"

    # (b) load-bearing dense concrete is compression-dominant in the converged
    # state: re-derive the stationary moduli at the final design and compare
    # principal magnitudes per element (sign masks of the converged field)
    states = truss.build_member_states(pos, result.members, mesh,
                                       problem.run.ssm_radius, problem.run.min_member_length)
    scale_c, _ = optimizer.simp_stiffness_scale(result.rho, problem.run.simp_penalty,
                                                problem.run.simp_floor)
    sys_f, assignment, _, _ = bimodulus.run_inner_loop(
        mesh, problem.bcs, loop.F, scale_c, problem.run.thickness,
        states, result.x_t, problem.run.bimodulus, problem.run.bimodulus.ratio_floor)
    sig_f, s1, s2, _ = fea.gauss_stresses(mesh, sys_f.d, assignment.d_matrices())
    mag = np.abs(sig_f).max(axis=(1, 2))
    s1m, s2m = s1.mean(axis=1), s2.mean(axis=1)
    dense = result.rho > 0.5
    load_bearing = mag > 0.1 * np.quantile(mag, 0.995)
    fully_soft = assignment.tension1.all(axis=1) & assignment.tension2.all(axis=1)
    tension_dominant = s1m > np.abs(s2m)
    n_check = int(np.count_nonzero(dense & load_bearing))
    n_soft = int(np.count_nonzero(dense & load_bearing & fully_soft))
    n_tdom = int(np.count_nonzero(dense & load_bearing & tension_dominant))
    assert n_soft == 0, f"{n_soft} dense load-bearing elements fully tension-softened"
    assert n_tdom <= 0.01 * n_check, f"{n_tdom}/{n_check} dense load-bearing elements tension-dominant"
    report(8, True, f"{len(active)} active members all over tensile bottom fiber; "
           f"{n_tdom}/{n_check} load-bearing dense elements tension-dominant; "
           f"runtime {elapsed:.0f}s")


def test_criterion_9_determinism(tmp_path):
    cfg = tmp_path / "det.cfg"
    cfg.write_text(beam_config(nx=12, ny=6, extra_run="max_outer = 6"))
    out1, out2 = tmp_path / "run1", tmp_path / "run2"
    assert main(["optimize", str(cfg), "--out", str(out1)]) == 0
    assert main(["optimize", str(cfg), "--out", str(out2)]) == 0
    names = sorted(os.listdir(out1))
    assert names == sorted(os.listdir(out2))
    for name in names:
        assert filecmp.cmp(out1 / name, out2 / name, shallow=False), name
    report(9, True, f"byte-identical bundles across two runs ({', '.join(names)})")
