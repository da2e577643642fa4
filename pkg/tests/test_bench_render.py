import csv
import io
import random
import re
from fractions import Fraction as F

import pytest

from reachsynth import bench
from reachsynth.geometry import Partition
from reachsynth.model import validate
from reachsynth.post import build_table
from reachsynth.render import DEFAULT_COLORS, RenderSpec, cell_rows, grid_lines, is_region_inside, must_may, render
from reachsynth.solver import brute_force
from reachsynth.synth import init_partition


def test_low_speed_bin_cannot_turn():
    cfg = bench.VehicleConfig(theta_bins=4, v_bins=2)
    rows = bench.vehicle_coefficients(cfg)
    assert all(r["e"] == 0 for r in rows if r["v_bin"] == 0)
    assert all(r["e"] == r["v_mid"] for r in rows if r["v_bin"] > 0)


def test_heading_bin_at_zero():
    rows = bench.vehicle_coefficients(bench.VehicleConfig())
    zero = [r for r in rows if r["theta_mid"] == 0]
    assert zero and all(r["a"] == 1 and r["c"] == 0 for r in zero)


def test_coefficient_table_follows_midpoint_formulas():
    import math
    cfg = bench.VehicleConfig(theta_bins=2, v_bins=4)
    for r in bench.vehicle_coefficients(cfg):
        assert abs(float(r["a"]) - math.cos(float(r["theta_mid"]))) <= 2 ** -20
        assert abs(float(r["c"]) - math.sin(float(r["theta_mid"]))) <= 2 ** -20
        assert r["b"] == r["d"] == 0


def test_vehicle_locations_partition_speed_heading_box():
    sys = bench.dubins_pwl()
    assert Partition(tuple(l.invariant for l in sys.locations), sys.state_space).problems() == []
    accel = [u for u in sys.inputs if u[0] > 0]
    x = (F(1), F(1), F(1, 4), F(0))
    for i, u in enumerate(sys.inputs):
        assert sys.step(x, i)[2] == x[2] + u[0]
    assert accel


def test_full_scale_counts():
    p = bench.full_scale_instance()
    assert len(p.control.cells) == 768 and validate(p) == []


def test_desk_vehicle_validates():
    assert validate(bench.desk_vehicle_instance()) == []


def test_gridworld_layouts():
    walled = bench.gridworld(6, 4, "walled")
    assert len(walled.safe) == 24 - 8
    with pytest.raises(ValueError):
        bench.gridworld(4, 4, "walled")
    with pytest.raises(ValueError):
        bench.gridworld(4, 4, "maze")
    trivial = bench.gridworld(1, 2, "init-in-goal")
    assert validate(trivial) == [] and trivial.in_goal(trivial.init[0].center)


def test_random_instances_valid_and_seeded():
    for s in range(50):
        p = bench.random_instance(random.Random(s))
        assert validate(p) == []
        assert len(p.control.cells) <= 12 and p.system.n_inputs <= 4
    a = bench.random_instance(random.Random(3))
    assert a == bench.random_instance(random.Random(3))


def test_unknown_preset_lists_names():
    with pytest.raises(KeyError, match="grid4x4"):
        bench.preset("nope")


# --------------------------------------------------------------------------- render


def _certified(name):
    problem = bench.preset(name)
    part = init_partition(problem, 0)
    table = build_table(problem.system, part, problem.control)
    return problem, brute_force(problem, table, "strengthened", partition=part).certificate


def test_grid_lines_match_control_projection():
    problem = bench.preset("grid4x4")
    xs, ys = grid_lines(problem, (0, 1))
    assert len(xs) == 5 and len(ys) == 5
    svg, _ = render(problem)
    assert svg.count('class="vline"') == 5 and svg.count('class="hline"') == 5
    v = bench.desk_vehicle_instance()
    xs, ys = grid_lines(v, (0, 1))
    assert (len(xs), len(ys)) == (4, 3)


def test_must_inside_may_and_csv():
    problem, cert = _certified("conveyor4-step2")
    must, may = must_may(problem, cert)
    assert must and must <= may and is_region_inside(cert.partition, must, may)
    svg, table = render(problem, cert)
    assert svg.count('class="vline"') == 5 and svg.count('class="hline"') == 2
    rows = list(csv.DictReader(io.StringIO(table)))
    assert [r["cell"] for r in rows] == [str(p) for p in range(len(cert.partition))]
    listed_must = {int(r["cell"]) for r in rows if r["role"] == "must"}
    listed_may = {int(r["cell"]) for r in rows if r["role"] in ("must", "may")}
    assert listed_must == set(must) and listed_must <= listed_may


def test_colors_follow_spec():
    problem = bench.preset("grid4x4")
    colors = dict(DEFAULT_COLORS, must="#123456", free="#abcdef")
    svg, _ = render(problem, None, RenderSpec(colors=colors, labels="rank"))
    assert 'class="free" fill="#abcdef"' in svg and 'class="must" fill="#123456"' in svg
    assert len(re.findall(r"<rect ", svg)) == len(problem.control.cells)


def test_render_spec_errors():
    problem = bench.preset("grid4x4")
    with pytest.raises(ValueError, match="axes"):
        render(problem, None, RenderSpec(axes=(0, 0)))
    with pytest.raises(ValueError, match="roles"):
        render(problem, None, RenderSpec(colors={"must": "#000"}))


def test_roles_without_certificate():
    problem = bench.preset("grid4x4-blocks")
    roles = {r.role for r in cell_rows(problem)}
    assert roles == {"unsafe", "goal", "init", "free"}
