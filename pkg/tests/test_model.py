import json
import random
from fractions import Fraction as F

import pytest
from hypothesis import given, settings, strategies as st

from reachsynth import bench
from reachsynth.geometry import Box, uniform_partition
from reachsynth.model import (AffineDynamics, Location, OutOfDomain, PiecewiseAffineSystem, Problem, locate, step,
                              validate)
from reachsynth.serial import FormatError, dumps, load_problem, problem_from_json, problem_to_json, save_problem


def box(*bounds):
    return Box.from_bounds(*[(F(a), F(b)) for a, b in bounds])


def shift_1d():
    X = box((0, 1))
    return PiecewiseAffineSystem(X, box((0, 1)), [(F(1, 4),)], [Location(X, AffineDynamics([[1]], [[1]], [0]))])


def four_quadrants():
    X = box((0, 2), (0, 2))
    locs = []
    for i, (a, b) in enumerate(((0, 0), (1, 0), (0, 1), (1, 1))):
        locs.append(Location(box((a, a + 1), (b, b + 1)),
                             AffineDynamics([[1, 0], [0, 1]], [[0], [0]], [i, 0])))
    return PiecewiseAffineSystem(X, box((0, 0)), [(0,)], locs)


def test_step_shift():
    assert step(shift_1d(), (F(1, 10),), 0) == (F(7, 20),)


def test_step_outside_domain():
    with pytest.raises(OutOfDomain):
        step(shift_1d(), (F(2),), 0)


def test_vehicle_rest_state_is_fixed():
    sys = bench.dubins_pwl()
    idle = sys.inputs.index((F(0), F(0)))
    x = (F(0), F(0), F(0), F(0))
    assert step(sys, x, idle) == x


def test_locate_tie_breaks():
    sys = four_quadrants()
    assert locate(sys, (F(3, 2), F(1, 2))) == 1
    assert locate(sys, (F(1), F(1, 2))) == 0          # shared face of 0 and 1
    assert locate(sys, (F(3, 2), F(1))) == 1          # shared face of 1 and 3
    assert locate(sys, (F(1), F(1))) == 0             # vertex of all four
    assert step(sys, (F(1), F(1)), 0) == (F(1), F(1))


def test_validate_gridworld_clean():
    assert validate(bench.gridworld(4, 4, "open")) == []


def test_validate_straddling_goal():
    p = bench.conveyor(4)
    bad = Problem(p.system, p.control, p.init, p.safe, [box((F(5, 2), 4))])
    v = validate(bad)
    assert [x.code for x in v] == ["goal-aligned"] and v[0].ids == (2,)


def test_validate_init_outside_safe():
    p = bench.conveyor(4)
    bad = Problem(p.system, p.control, p.init, [box((1, 4))], p.goal)
    assert "init-safe" in {x.code for x in validate(bad)}


def test_validate_bad_k_and_inputs():
    p = bench.conveyor(4)
    assert "k" in {x.code for x in validate(Problem(p.system, p.control, p.init, p.safe, p.goal, k=0))}
    sys = PiecewiseAffineSystem(p.system.state_space, box((0, 1)), [(F(5),)], p.system.locations)
    assert "inputs" in {x.code for x in validate(Problem(sys, p.control, p.init, p.safe, p.goal))}


def test_rank_bound_defaults_to_control_cells():
    assert bench.conveyor(4).rank_bound == 4


@pytest.mark.parametrize("name", sorted(bench.PRESETS))
def test_presets_validate_and_round_trip(name, tmp_path):
    p = bench.preset(name)
    assert validate(p) == []
    path = tmp_path / "p.json"
    save_problem(p, path)
    assert load_problem(path) == p


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000))
def test_random_instances_round_trip(seed):
    p = bench.random_instance(random.Random(seed))
    assert validate(p) == []
    assert problem_from_json(json.loads(dumps(problem_to_json(p)))) == p


def test_format_errors_name_the_field():
    doc = problem_to_json(bench.conveyor(4))
    doc["format"] = "other/9"
    with pytest.raises(FormatError, match="format"):
        problem_from_json(doc)
    doc = problem_to_json(bench.conveyor(4))
    del doc["goal"]
    with pytest.raises(FormatError, match="goal"):
        problem_from_json(doc)
    doc = problem_to_json(bench.conveyor(4))
    doc["system"]["inputs"][0] = ["1/0"]
    with pytest.raises(FormatError):
        problem_from_json(doc)


def test_step_total_on_sampled_states():
    sys = bench.dubins_pwl(bench.VehicleConfig(theta_bins=4, v_bins=2))
    rng = random.Random(0)
    X = sys.state_space
    for _ in range(200):
        x = tuple(lo + (hi - lo) * F(rng.randrange(9), 8) for lo, hi in zip(X.lo, X.hi))
        l = sys.locate(x)
        assert sys.locations[l].invariant.contains_point(x)
        assert all(not sys.locations[j].invariant.contains_point(x) for j in range(l))
        assert len(step(sys, x, rng.randrange(sys.n_inputs))) == 4


def test_uniform_partition_row_major():
    p = uniform_partition(box((0, 2), (0, 3)), [2, 3])
    assert p.cells[1] == box((0, 1), (1, 2)) and p.cells[3] == box((1, 2), (0, 1))
