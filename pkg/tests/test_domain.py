import numpy as np
import pytest

from rctopo.domain import ConfigError, Mesh, build_problem, emit_toml, total_envelope_volume

from conftest import beam_config


def test_canonical_three_point_beam_builds():
    p = build_problem(beam_config(nx=160, ny=20, element_size=0.762, ground=False,
                                  v_c_frac=0.5, thickness=7.5))
    assert p.mesh.n_elements == 3200
    assert p.mesh.dof_count == 2 * 161 * 21
    # pin at bottom-left, roller at bottom-right, load at top mid-span
    assert set(p.bcs.fixed_dofs) == {0, 1, 2 * p.mesh.node_id(160, 0) + 1}
    (dof, mag), = p.bcs.point_loads
    assert dof == 2 * p.mesh.node_id(80, 20) + 1 and mag == -1.0


def test_no_supports_is_rigid_body_motion():
    text = beam_config().replace('[[supports]]\nanchor = "bottom-left"\ndofs = "xy"\n', "")
    text = text.replace('[[supports]]\nanchor = "bottom-right"\ndofs = "y"\n', "")
    with pytest.raises(ConfigError, match="rigid body motion"):
        build_problem(text)


def test_insufficient_restraint_rank_is_rigid_body_motion():
    # two x-only constraints on the same vertical line cannot stop y translation
    text = beam_config()
    text = text.replace('anchor = "bottom-left"\ndofs = "xy"', 'anchor = "bottom-left"\ndofs = "x"')
    text = text.replace('anchor = "bottom-right"\ndofs = "y"', 'anchor = "top-left"\ndofs = "x"')
    with pytest.raises(ConfigError, match="rigid body motion"):
        build_problem(text)


def test_load_on_fixed_dof_rejected():
    text = beam_config(ground=False).replace('anchor = "top-mid"', 'anchor = "bottom-left"')
    with pytest.raises(ConfigError, match="fixed DOF"):
        build_problem(text)


def test_unknown_field_is_named():
    with pytest.raises(ConfigError, match="mesh.nz"):
        build_problem(beam_config().replace("[mesh]", "[mesh]\nnz = 3"))


def test_parse_failure_reports_location():
    with pytest.raises(ConfigError, match="parse failure"):
        build_problem("[mesh\nnx = 2")


def test_zero_admissible_length_member_rejected():
    text = beam_config(nx=8, ny=4)
    # enlarge the move boxes until the first two chord nodes can coincide
    text = text.replace("dx = 0.45\ndy = 0.45", "dx = 3.0\ndy = 3.0")
    with pytest.raises(ConfigError, match="zero"):
        build_problem(text)


def test_paper_scale_budgets_are_valid():
    text = beam_config(nx=160, ny=20, element_size=0.762, thickness=7.5, ground=False)
    text = text.replace(f"v_c_max = {0.6 * 160 * 20 * 0.762**2 * 7.5}", "v_c_max = 9920.0")
    text = text.replace("v_t_max = 2.0", "v_t_max = 110.0")
    p = build_problem(text)
    assert p.run.v_c_max == 9920.0 and p.run.v_t_max == 110.0
    env = total_envelope_volume(p.mesh, p.run.thickness)
    assert p.run.v_c_max < env


def test_total_envelope_volume():
    assert total_envelope_volume(Mesh(2, 2, 1.0), 1.0) == 4.0
    vol = total_envelope_volume(Mesh(160, 20, 0.762), 7.5)
    # hand product of the published envelope dimensions (rounded to mm)
    assert vol == pytest.approx(121.9 * 15.2 * 7.5, rel=5e-3)
    assert 9920.0 / vol == pytest.approx(0.714, rel=5e-3)


def test_normalize_round_trip_is_identical():
    p1 = build_problem(beam_config())
    text = emit_toml(p1.normalized)
    p2 = build_problem(text)
    assert p1.normalized == p2.normalized
    assert np.array_equal(p1.mesh.element_dofs, p2.mesh.element_dofs)
    assert np.array_equal(p1.bcs.fixed_dofs, p2.bcs.fixed_dofs)
    assert p1.bcs.point_loads == p2.bcs.point_loads
    assert np.array_equal(p1.ground.nodes, p2.ground.nodes)
    assert np.array_equal(p1.ground.bounds_lo, p2.ground.bounds_lo)
    assert np.array_equal(p1.ground.bounds_hi, p2.ground.bounds_hi)
    assert p1.ground.members == p2.ground.members
    assert p1.run == p2.run


def test_two_builds_bit_identical():
    text = beam_config()
    a, b = build_problem(text), build_problem(text)
    assert np.array_equal(a.mesh.element_dofs, b.mesh.element_dofs)
    assert np.array_equal(a.mesh.node_coords, b.mesh.node_coords)
    assert np.array_equal(a.bcs.fixed_dofs, b.bcs.fixed_dofs)


def test_node_indexing_column_major_y_fastest():
    m = Mesh(3, 2, 1.0)
    assert m.node_id(0, 0) == 0
    assert m.node_id(0, 2) == 2
    assert m.node_id(1, 0) == 3
    assert m.element_id(1, 1) == 3
    assert np.allclose(m.node_coords[m.node_id(2, 1)], [2.0, 1.0])


def test_anchor_resolution():
    m = Mesh(8, 4, 0.5)
    p = build_problem(beam_config(nx=8, ny=4, element_size=0.5, ground=False, v_c_frac=0.5))
    (dof, _), = p.bcs.point_loads
    assert dof == 2 * m.node_id(4, 4) + 1


def test_ground_bounds_clipped_to_envelope():
    text = beam_config(nx=8, ny=4)
    text = text.replace("y = 0.75\ndx = 0.45\ndy = 0.45", "y = 0.75\ndx = 0.45\ndy = 2.0")
    p = build_problem(text)
    assert (p.ground.bounds_lo >= 0).all()
    assert (p.ground.bounds_hi[:, 1] <= p.mesh.height).all()


def test_out_of_envelope_node_rejected():
    text = beam_config(nx=8, ny=4).replace("y = 0.75", "y = 9.0", 1)
    with pytest.raises(ConfigError, match="outside design envelope"):
        build_problem(text)


def test_vts_mode_disables_projection():
    p = build_problem(beam_config(mode="vts"))
    assert p.run.heaviside_enabled is False


def test_defaults_resolved_and_echoed():
    p = build_problem(beam_config(nx=10, ny=5, element_size=2.0))
    assert p.run.filter_radius == pytest.approx(5.0)
    assert p.run.ssm_radius == pytest.approx(3.0)
    assert p.run.split_min_length == pytest.approx(4.0)
    assert p.normalized["run"]["filter_radius"] == p.run.filter_radius
