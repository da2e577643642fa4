import random
from fractions import Fraction as F

import pytest

from reachsynth import bench
from reachsynth.certify import Certificate
from reachsynth.encode import (DecodeError, EncodingError, decode_model, encode, encode_exact, encode_strengthened,
                               encode_weakened, model_values, parse_sexprs, predict_assertions)
from reachsynth.geometry import Box, uniform_partition
from reachsynth.model import Controller, Problem, RankingFunction, classify
from reachsynth.post import build_table
from reachsynth.solver import SolverConfig, resolve_executable, solve
from reachsynth.synth import init_partition

try:
    resolve_executable()
    HAVE_SOLVER = True
except Exception:
    HAVE_SOLVER = False
needs_solver = pytest.mark.skipif(not HAVE_SOLVER, reason="no SMT solver on PATH")


def setup(name, splits=0):
    problem = bench.preset(name) if isinstance(name, str) else name
    part = init_partition(problem, splits)
    return problem, part, build_table(problem.system, part, problem.control)


def model_text(cert: Certificate, n_cells: int) -> str:
    parts = [f"(define-fun u_{c} () Int {u})" for c, u in enumerate(cert.controller.table)]
    parts += [f"(define-fun v_{c} () Int {v})" if v >= 0 else f"(define-fun v_{c} () Int (- {-v}))"
              for c, v in enumerate(cert.ranking.ranks)]
    parts += [f"(define-fun m_{p} () Bool {'true' if p in cert.invariant_cells else 'false'})"
              for p in range(n_cells)]
    parts.append("(define-fun m_out () Bool false)")
    return "(\n  " + "\n  ".join(parts) + "\n)"


def test_deterministic_text():
    problem, part, table = setup("grid4x4", 1)
    a = encode(problem, part, table, "strengthened")
    b = encode(problem, part, build_table(problem.system, part, problem.control), "strengthened")
    assert a.smtlib_text == b.smtlib_text and a.digest() == b.digest()


@pytest.mark.parametrize("variant", ["weakened", "strengthened"])
@pytest.mark.parametrize("seed", range(8))
def test_assertion_count_matches_prediction(variant, seed):
    problem = bench.random_instance(random.Random(seed))
    problem, part, table = setup(problem, 1 if problem.system.dim == 1 else 0)
    classes = classify(problem, part)
    enc = encode(problem, part, table, variant, classes)
    pred = predict_assertions(problem, table, classes, variant)
    assert enc.n_assertions == pred["total"] == enc.smtlib_text.count("(assert ")
    assert {k: v for k, v in enc.counts.items() if v} == {k: v for k, v in pred.items() if v and k != "total"}


def test_header_records_variant_and_count():
    problem, part, table = setup("conveyor4")
    enc = encode_weakened(problem, table, part)
    head = enc.smtlib_text.splitlines()[:4]
    assert "variant=weakened" in head[0]
    assert f"assertions={enc.n_assertions}" in head[3]


def test_k2_prediction():
    problem, part, table = setup(bench.gridworld(4, 4, "open", F(3, 4), k=2), 1)
    classes = classify(problem, part)
    enc = encode(problem, part, table, "strengthened", classes)
    assert enc.k == 2 and enc.n_assertions == predict_assertions(problem, table, classes, "strengthened", 2)["total"]


def test_rejections():
    problem, part, table = setup("conveyor4")
    with pytest.raises(EncodingError, match="variant"):
        encode(problem, part, table, "medium")
    with pytest.raises(EncodingError, match="k"):
        encode(problem, part, table, "weakened", k=4)
    other = init_partition(problem, 1)
    with pytest.raises(EncodingError, match="different partition"):
        encode(problem, other, table, "weakened")
    shifted = bench.conveyor(4, step=F(1, 2))
    p2, part2, t2 = setup(shifted, 0)
    with pytest.raises(EncodingError, match="aligned"):
        encode_exact(p2, t2, part2)


def test_decode_round_trip():
    problem, part, table = setup("conveyor4-step2")
    enc = encode_strengthened(problem, table, part)
    cert = Certificate(Controller((2, 2, 1, 0)), RankingFunction((1, 2, 0, 0), 2), frozenset({0, 2}), part,
                       "strengthened", 1, enc.problem_hash)
    assert decode_model(enc, model_text(cert, len(part))) == Certificate(
        cert.controller, RankingFunction((1, 2, 0, 0), 2), cert.invariant_cells, part, "strengthened", 1,
        enc.problem_hash)


def test_decode_negative_and_missing():
    problem, part, table = setup("conveyor4")
    enc = encode_weakened(problem, table, part)
    vals = model_values("((define-fun v_0 () Int (- 3)) (define-fun m_0 () Bool true))")
    assert vals == {"v_0": -3, "m_0": True}
    cert = Certificate(Controller((2, 2, 2, 2)), RankingFunction((3, 2, 1, 0), 3), frozenset({0}), part)
    text = model_text(cert, len(part)).replace("(define-fun v_2 () Int 1)", "")
    with pytest.raises(DecodeError, match="v_2"):
        decode_model(enc, text)


def test_parse_sexprs_nested():
    assert parse_sexprs("(a (b c) |q x|)") == [["a", ["b", "c"], "|q x|"]]


@needs_solver
def test_init_in_goal_sat_and_decoded_rules():
    X = Box((F(0),), (F(1),))
    conv = bench.conveyor(1)
    problem = Problem(conv.system, uniform_partition(X, [1]), [X], [X], [X])
    problem, part, table = setup(problem)
    enc = encode_strengthened(problem, table, part)
    out = solve(enc, SolverConfig(timeout=10))
    assert out.status == "sat" and out.wall_time < 1
    cert = decode_model(enc, out.model_text)
    assert cert.ranking.ranks == (0,) and 0 in cert.invariant_cells


@needs_solver
def test_conveyor_weakened_model_shape():
    problem, part, table = setup("conveyor4")
    enc = encode_weakened(problem, table, part)
    out = solve(enc, SolverConfig(timeout=10))
    assert out.status == "sat"
    cert = decode_model(enc, out.model_text)
    goal = problem.goal_controls
    assert all((v == 0) == (c in goal) for c, v in enumerate(cert.ranking.ranks))
    assert {0} <= cert.invariant_cells
    assert cert.controller.table[:3] == (2, 2, 2)


@needs_solver
def test_decoded_values_satisfy_every_assertion():
    problem, part, table = setup("grid4x4-blocks", 1)
    enc = encode_weakened(problem, table, part)
    out = solve(enc, SolverConfig(timeout=30))
    assert out.status == "sat"
    cert = decode_model(enc, out.model_text)
    pins = [f"(assert (= u_{c} {u}))" for c, u in enumerate(cert.controller.table)]
    pins += [f"(assert (= v_{c} {v}))" for c, v in enumerate(cert.ranking.ranks)]
    pins += [f"(assert {'' if p in cert.invariant_cells else '(not '}m_{p}{'' if p in cert.invariant_cells else ')'})"
             for p in range(len(part))]
    text = enc.smtlib_text.replace("(check-sat)", "\n".join(pins) + "\n(check-sat)")
    assert solve(text, SolverConfig(timeout=30)).status == "sat"


@needs_solver
def test_blocked_conveyor_all_variants_unsat():
    problem, part, table = setup("conveyor4-blocked")
    for fn in (encode_weakened, encode_strengthened, encode_exact):
        assert solve(fn(problem, table, part), SolverConfig(timeout=10)).status == "unsat"


@needs_solver
def test_coarse_conveyor_strengthened_unsat_weakened_sat():
    problem, part, table = setup("conveyor4")
    cfg = SolverConfig(timeout=10)
    assert solve(encode_weakened(problem, table, part), cfg).status == "sat"
    assert solve(encode_strengthened(problem, table, part), cfg).status == "unsat"
