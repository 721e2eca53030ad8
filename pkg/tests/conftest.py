import os

import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "ci", derandomize=True, deadline=None,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("ci")

CONFIG_DIR = os.path.join(os.path.dirname(__file__), os.pardir, "configs")


@pytest.fixture(scope="session")
def config_dir():
    return os.path.abspath(CONFIG_DIR)


def beam_config(nx=16, ny=8, element_size=1.0, thickness=1.0, mode="binary",
                v_c_frac=0.6, v_t_max=2.0, ground=True, bimodulus=True,
                extra_run="", extra_bimodulus=""):
    """Small 3-point-bending document builder shared across the suite."""
    parts = [f"""
[mesh]
nx = {nx}
ny = {ny}
element_size = {element_size}

[envelope]
thickness = {thickness}

[[supports]]
anchor = "bottom-left"
dofs = "xy"

[[supports]]
anchor = "bottom-right"
dofs = "y"

[[loads]]
anchor = "top-mid"
fy = -1.0
"""]
    if ground:
        w = nx * element_size
        y0 = 0.75 * element_size
        d = 0.45 * element_size
        parts.append(f"""
[[ground_structure.nodes]]
x = {0.1 * w}
y = {y0}
dx = {d}
dy = {d}

[[ground_structure.nodes]]
x = {0.5 * w}
y = {y0}
dx = {d}
dy = {d}

[[ground_structure.nodes]]
x = {0.9 * w}
y = {y0}
dx = {d}
dy = {d}

[[ground_structure.members]]
nodes = [0, 1]
area = 0.5

[[ground_structure.members]]
nodes = [1, 2]
area = 0.5
""")
    v_c = v_c_frac * nx * ny * element_size**2 * thickness
    parts.append(f"""
[run]
mode = "{mode}"
v_c_max = {v_c}
v_t_max = {v_t_max}
{extra_run}

[run.bimodulus]
enabled = {"true" if bimodulus else "false"}
{extra_bimodulus}
""")
    return "".join(parts)
