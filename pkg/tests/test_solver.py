import itertools
import random
import stat
import time

import psutil
import pytest
from hypothesis import given, settings, strategies as st

from reachsynth import bench
from reachsynth.model import classify
from reachsynth.post import build_table
from reachsynth.solver import (ENV_VAR, BudgetExceeded, SolverConfig, SolverConfigError, SolverOutcome, brute_force,
                               rank_assignment, resolve_executable, solve)
from reachsynth.synth import init_partition

try:
    resolve_executable()
    HAVE_SOLVER = True
except SolverConfigError:
    HAVE_SOLVER = False
needs_solver = pytest.mark.skipif(not HAVE_SOLVER, reason="no SMT solver on PATH")


def fake_solver(tmp_path, body):
    path = tmp_path / "fake-solver"
    path.write_text("#!/bin/sh\n" + body + "\n")
    path.chmod(path.stat().st_mode | stat.S_IEXEC)
    return str(path)


def _descendants():
    return {p.pid for p in psutil.Process().children(recursive=True)}


@needs_solver
def test_trivial_scripts():
    cfg = SolverConfig(timeout=10)
    assert solve("(assert false)\n(check-sat)\n", cfg).status == "unsat"
    out = solve("(assert true)\n(check-sat)\n(get-model)\n", cfg)
    assert out.status == "sat" and out.model_text is not None and "define-fun" not in out.model_text


def test_timeout_kills_whole_process_group(tmp_path):
    exe = fake_solver(tmp_path, "sleep 60 &\nsleep 60")
    before = _descendants()
    t0 = time.monotonic()
    out = solve("(check-sat)\n", SolverConfig(exe, args=(), timeout=0.5))
    assert out.status == "timeout" and out.model_text is None
    assert time.monotonic() - t0 < 10
    time.sleep(0.2)
    leaked = [p for p in psutil.process_iter(["pid", "cmdline"])
              if p.info["cmdline"] and p.info["cmdline"][:2] == ["sleep", "60"] and p.pid not in before]
    assert not leaked and _descendants() <= before


def test_garbage_output_is_crash(tmp_path):
    exe = fake_solver(tmp_path, "cat > /dev/null\necho 'segfault-ish' >&2\necho '(error \"boom\")'\nexit 3")
    out = solve("(check-sat)\n", SolverConfig(exe, args=()))
    assert out.status == "crash" and "boom" in out.output and "segfault" in out.stderr_tail


def test_missing_solver_is_config_error(monkeypatch):
    monkeypatch.setenv(ENV_VAR, "definitely-not-a-solver-binary")
    with pytest.raises(SolverConfigError, match="definitely-not"):
        SolverConfig().command()
    with pytest.raises(SolverConfigError):
        SolverConfig(timeout=0)


def test_env_var_resolution(tmp_path, monkeypatch):
    exe = fake_solver(tmp_path, "cat > /dev/null\necho unsat")
    monkeypatch.setenv(ENV_VAR, exe)
    assert resolve_executable() == exe
    assert solve("(check-sat)", SolverConfig(args=())).status == "unsat"


def test_outcome_invariant():
    with pytest.raises(ValueError):
        SolverOutcome("sat")
    with pytest.raises(ValueError):
        SolverOutcome("unsat", "model")


# --------------------------------------------------------------------------- rank layering


def _enumerate_ranks(n, edges, goal, max_rank):
    for V in itertools.product(range(max_rank + 1), repeat=n):
        if all((V[c] == 0) == (c in goal) for c in range(n)) and all(V[a] >= V[b] + w for a, b, w in edges):
            return V
    return None


@settings(max_examples=300, deadline=None)
@given(st.integers(1, 4), st.integers(0, 3), st.data())
def test_rank_assignment_matches_enumeration(n, max_rank, data):
    pairs = [(a, b) for a in range(n) for b in range(n)]
    edges = data.draw(st.sets(st.tuples(st.sampled_from(pairs), st.sampled_from((0, 1))), max_size=6))
    edges = [(a, b, w) for (a, b), w in edges]
    goal = data.draw(st.sets(st.integers(0, n - 1)))
    got = rank_assignment(n, edges, goal, max_rank)
    want = _enumerate_ranks(n, edges, goal, max_rank)
    assert (got is None) == (want is None)
    if got is not None:
        assert all(got[a] >= got[b] + w for a, b, w in edges)
        assert all((got[c] == 0) == (c in goal) for c in range(n)) and max(got) <= max_rank


# --------------------------------------------------------------------------- brute force


def _oracle(name, variant, splits=0):
    problem = bench.preset(name)
    part = init_partition(problem, splits)
    table = build_table(problem.system, part, problem.control)
    return problem, part, brute_force(problem, table, variant, partition=part)


def test_conveyor_weakened_witness_all_forward():
    problem, part, out = _oracle("conveyor4", "weakened")
    assert out.status == "sat"
    fwd = problem.system.inputs.index((1,))
    ctl = out.certificate.controller.table
    assert all(ctl[c] == fwd for c in range(3))


def test_blocked_conveyor_unsat_everywhere():
    for variant in ("weakened", "strengthened", "exact"):
        assert _oracle("conveyor4-blocked", variant)[2].status == "unsat"


def test_budget_refusal():
    problem = bench.preset("grid4x4")
    part = init_partition(problem, 0)
    table = build_table(problem.system, part, problem.control)
    with pytest.raises(BudgetExceeded, match=r"\|U\|"):
        brute_force(problem, table, "weakened", classes=classify(problem, part))


@needs_solver
@pytest.mark.parametrize("seed", range(20))
def test_brute_force_agrees_with_k2_encoding(seed):
    from reachsynth.encode import encode
    rng = random.Random(900 + seed)
    problem = bench.random_instance(rng)
    part = init_partition(problem, 0)
    table = build_table(problem.system, part, problem.control)
    classes = classify(problem, part)
    for variant in ("weakened", "strengthened"):
        enc = encode(problem, part, table, variant, classes, k=2)
        smt = solve(enc, SolverConfig(timeout=30)).status
        assert smt == brute_force(problem, table, variant, k=2, classes=classes).status

