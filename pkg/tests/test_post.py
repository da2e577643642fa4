import random
from fractions import Fraction as F

from reachsynth import bench
from reachsynth.geometry import Box, split_cells, uniform_partition
from reachsynth.model import AffineDynamics, Location, PiecewiseAffineSystem
from reachsynth.post import (OUT, SuccessorTable, box_post, build_table, cached_table, cell_choices, exact_post,
                             exactly_aligned, fixed_point, k_step_over, k_step_under, over_post, under_post)
from reachsynth.synth import init_partition


def box(*bounds):
    return Box.from_bounds(*[(F(a), F(b)) for a, b in bounds])


def line(inputs, A=1, X=(0, 1)):
    Xb = box(X)
    us = [(F(u),) for u in inputs]
    return PiecewiseAffineSystem(Xb, box((min(inputs), max(inputs))), us,
                                 [Location(Xb, AffineDynamics([[A]], [[1]], [0]))])


QUARTERS = uniform_partition(box((0, 1)), [4])


def test_exact_post_pieces():
    ident = line([0])
    sp = exact_post(ident, box((0, F(1, 4))), 0)
    assert len(sp.pieces) == 1 and sp.images()[0].bounding_box() == box((0, F(1, 4)))
    sp = exact_post(line([F(3, 10)]), box((0, F(1, 4))), 0)
    assert sp.images()[0].bounding_box() == box((F(3, 10), F(11, 20)))
    X = box((0, 1))
    two = PiecewiseAffineSystem(X, box((0, 0)), [(F(0),)], [
        Location(box((0, F(1, 2))), AffineDynamics([[1]], [[1]], [0])),
        Location(box((F(1, 2), 1)), AffineDynamics([[F(1, 2)]], [[1]], [0]))])
    sp = exact_post(two, box((F(1, 4), F(3, 4))), 0)
    assert [l for l, _, _ in sp.pieces] == [0, 1]


def test_over_and_under_examples():
    shift = line([F(3, 10)])
    assert over_post(shift, QUARTERS, 0, 0) == {1, 2}
    assert under_post(shift, QUARTERS, 0, 0) == set()
    ident = line([0])
    assert over_post(ident, QUARTERS, 1, 0) >= {1}
    assert under_post(ident, QUARTERS, 1, 0) == {1}
    push = line([F(19, 20)])
    assert over_post(push, QUARTERS, 0, 0) == {3, OUT}
    assert OUT not in under_post(push, QUARTERS, 0, 0)


def test_expansion_under_post():
    double = line([0], A=2)
    over, under = box_post(double, QUARTERS, box((0, F(1, 2))), 0)
    assert under == {0, 1, 2, 3}


def test_table_shape_and_rows():
    sys = line([F(-1, 4), F(3, 10), F(19, 20)])
    t = build_table(sys, QUARTERS)
    assert t.n_cells == 4 and t.n_inputs == 3
    for p in range(4):
        for i in range(3):
            assert set(t.over[p][i]) == over_post(sys, QUARTERS, p, i)
            assert set(t.under[p][i]) == under_post(sys, QUARTERS, p, i)
            assert set(t.under[p][i]) <= set(t.over[p][i])
    assert SuccessorTable.from_json(t.to_json()) == t


def test_incremental_rebuild_matches_fresh():
    problem = bench.preset("grid4x4")
    part = init_partition(problem, 1)
    t = build_table(problem.system, part, problem.control)
    split = [0, 5, 9]
    fine = split_cells(part, {p: (part.cells[p].widest_axis(),) for p in split})
    inc = build_table(problem.system, fine, problem.control, previous=(t, split))
    assert inc == build_table(problem.system, fine, problem.control)
    # unsplit cells keep their id, so untouched rows compare directly
    kept = [p for p in range(len(part)) if p not in split and not set(split) & set().union(*t.over[p])]
    assert kept and all(inc.over[p] == t.over[p] for p in kept)


def test_k_step_conveyor():
    belt = line([F(1, 4)], X=(0, F(3, 4)))
    part = uniform_partition(belt.state_space, [3])
    t = build_table(belt, part)
    choice = [0, 0, 0]
    assert k_step_over(t, choice, 0, 1) == set(t.over[0][0])
    assert k_step_under(t, choice, 0, 1) == set(t.under[0][0])
    assert k_step_under(t, choice, 0, 2) == {2}
    assert 2 in k_step_over(t, choice, 0, 2)
    assert k_step_over(t, choice, 1, 3, goal={1}) == {1}
    assert k_step_under(t, choice, 2, 1) == set()
    assert k_step_under(t, choice, 2, 3) == set()


def test_fixed_point_and_choices():
    problem = bench.preset("conveyor4-step2")
    part = init_partition(problem, 0)
    t = build_table(problem.system, part, problem.control)
    fwd = [2, 2, 2, 2]
    assert cell_choices(t, fwd) == (2, 2, 2, 2)
    assert fixed_point(t.under, fwd, [0]) == {0, 2}
    assert OUT in fixed_point(t.over, fwd, [0])


def test_exactly_aligned():
    problem = bench.preset("conveyor4-step2")
    part = init_partition(problem, 0)
    t = build_table(problem.system, part, problem.control)
    assert exactly_aligned(problem.system, part, t, problem.control)
    shift = line([F(3, 10)])
    assert not exactly_aligned(shift, QUARTERS, build_table(shift, QUARTERS))


def test_cached_table(tmp_path):
    problem = bench.preset("grid4x4")
    part = init_partition(problem, 1)
    a = cached_table(problem.system, part, problem.control, tmp_path)
    assert list(tmp_path.iterdir())
    b = cached_table(problem.system, part, problem.control, tmp_path)
    assert a == b == build_table(problem.system, part, problem.control)


def test_parallel_build_matches_serial():
    problem = bench.random_instance(random.Random(7))
    part = init_partition(problem, 1)
    assert build_table(problem.system, part, problem.control, workers=3) == \
        build_table(problem.system, part, problem.control)
