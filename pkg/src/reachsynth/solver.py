"""External SMT solver driver and a brute-force verdict oracle for tiny instances."""
from __future__ import annotations

import itertools
import os
import shutil
import signal
import subprocess
import time
from dataclasses import dataclass, field

from .certify import Certificate
from .encode import problem_hash
from .geometry import Partition
from .model import CellClasses, Controller, Problem, RankingFunction, classify
from .post import OUT, SuccessorTable

ENV_VAR = "REACH_SYNTH_SOLVER"
STATUSES = ("sat", "unsat", "unknown", "timeout", "crash")


class SolverConfigError(RuntimeError):
    pass


class BudgetExceeded(ValueError):
    pass


def resolve_executable(flag: "str | None" = None) -> str:
    """``--solver`` flag, then ``$REACH_SYNTH_SOLVER``, then ``z3`` on PATH."""
    name = flag or os.environ.get(ENV_VAR) or "z3"
    path = shutil.which(name)
    if path is None:
        raise SolverConfigError(f"SMT solver {name!r} not found (set --solver or ${ENV_VAR})")
    return path


def default_args(executable: str) -> tuple:
    base = os.path.basename(executable).lower()
    if base.startswith("z3"):
        return ("-in", "-smt2")
    if base.startswith(("cvc4", "cvc5")):
        return ("--lang=smt2",)
    return ()


@dataclass(frozen=True)
class SolverConfig:
    executable: "str | None" = None
    args: "tuple | None" = None
    timeout: float = 60.0
    memory_mb: "int | None" = 4096

    def __post_init__(self):
        if not self.timeout > 0:
            raise SolverConfigError("timeout must be positive")

    def command(self) -> list:
        exe = resolve_executable(self.executable)
        args = default_args(exe) if self.args is None else self.args
        return [exe, *args]


@dataclass(frozen=True)
class SolverOutcome:
    status: str
    model_text: "str | None" = None
    wall_time: float = 0.0
    stderr_tail: str = ""
    output: str = ""
    certificate: "Certificate | None" = field(default=None, compare=False)

    def __post_init__(self):
        if self.status not in STATUSES:
            raise ValueError(f"bad status {self.status!r}")
        if (self.model_text is not None) != (self.status == "sat"):
            raise ValueError("model_text is present exactly when status is sat")


def _limit(memory_mb):
    def apply():
        if memory_mb:
            import resource

            cap = memory_mb * 1024 * 1024
            resource.setrlimit(resource.RLIMIT_AS, (cap, cap))
    return apply


def _kill(proc):
    try:
        os.killpg(proc.pid, signal.SIGKILL)
    except (ProcessLookupError, PermissionError):
        pass


def solve(encoded, cfg: "SolverConfig | None" = None) -> SolverOutcome:
    """Feed SMT-LIB text (or an ``EncodedProblem``) to a fresh solver process."""
    cfg = cfg or SolverConfig()
    text = encoded if isinstance(encoded, str) else encoded.smtlib_text
    cmd = cfg.command()
    t0 = time.monotonic()
    proc = subprocess.Popen(cmd, stdin=subprocess.PIPE, stdout=subprocess.PIPE, stderr=subprocess.PIPE,
                            text=True, start_new_session=True, preexec_fn=_limit(cfg.memory_mb))
    try:
        out, err = proc.communicate(text, timeout=cfg.timeout)
    except subprocess.TimeoutExpired:
        _kill(proc)
        out, err = proc.communicate()
        return SolverOutcome("timeout", None, time.monotonic() - t0, (err or "")[-2000:], out or "")
    except BaseException:
        _kill(proc)
        proc.communicate()
        raise
    finally:
        # the solver may have forked helpers into its session
        _kill(proc)
    wall = time.monotonic() - t0
    lines = out.splitlines()
    status = None
    rest = ""
    for j, line in enumerate(lines):
        word = line.strip()
        if not word:
            continue
        if word in ("sat", "unsat", "unknown"):
            status = word
            rest = "\n".join(lines[j + 1:])
        break
    if status is None:
        return SolverOutcome("crash", None, wall, (err or "")[-2000:] or f"exit code {proc.returncode}", out)
    return SolverOutcome(status, rest if status == "sat" else None, wall, (err or "")[-2000:], out)


# --------------------------------------------------------------------------- brute-force oracle

MAX_CONTROL = 12
MAX_INPUTS = 4


def _variant_rows(table: SuccessorTable, variant: str):
    # (closure rows, rank rows) per rule system
    return {
        "weakened": (table.under, table.under),
        "exact": (table.under, table.over),
        "strengthened": (table.over, table.over),
    }[variant]


def rank_assignment(n_nodes: int, edges, goal, max_rank: int) -> "list[int] | None":
    """Least ranks with ``V[a] >= V[b] + w`` per edge (a, b, w), goal nodes 0, others >= 1.

    None when no assignment within ``max_rank`` exists: either a cycle carries a strict
    edge or the longest weighted chain needs a rank above ``max_rank``.
    """
    V = [0 if c in goal else 1 for c in range(n_nodes)]
    for a, b, w in edges:
        if a in goal and (w > 0 or b not in goal):
            return None
    for _ in range(n_nodes + 1):
        changed = False
        for a, b, w in edges:
            if V[a] < V[b] + w:
                V[a] = V[b] + w
                changed = True
                if a in goal:
                    return None
        if not changed:
            break
    else:
        return None
    if max(V, default=0) > max_rank:
        return None
    return V


@dataclass
class _Ctx:
    problem: Problem
    table: SuccessorTable
    classes: CellClasses
    closure: tuple
    ranks: tuple
    k: int
    explored: int = 0


def _closure_targets(ctx, p, i):
    t = set(ctx.closure[p][i])
    if ctx.table.escapes(p, i):
        t.add(OUT)
    return t


def _members(ctx, assign, seeds):
    """Extend the member set to closure; None if it hits OUT or an unsafe cell.

    Returns (members, first cell whose control is unassigned or None).
    """
    seen = set(seeds)
    stack = list(seen)
    while stack:
        p = stack.pop()
        c = ctx.classes.control_of[p]
        if c not in assign:
            return seen, p
        for q in _closure_targets(ctx, p, assign[c]):
            if q == OUT or q not in ctx.classes.safe:
                return None, None
            if q not in seen:
                seen.add(q)
                stack.append(q)
    return seen, None


def _edges(ctx, assign, members):
    ctl = ctx.classes.control_of
    goal = ctx.classes.goal
    edges = set()
    for p in members:
        if p in goal:
            continue
        c = ctl[p]
        i = assign[c]
        for q in ctx.ranks[p][i]:
            if q != OUT:
                edges.add((c, ctl[q], 0))
        frontier = {p}
        for _ in range(ctx.k):
            nxt = set()
            for q in frontier:
                if q == OUT or q in goal:
                    nxt.add(q)
                else:
                    nxt.update(ctx.ranks[q][assign[ctl[q]]])
            frontier = nxt
        for q in frontier:
            if q != OUT:
                edges.add((c, ctl[q], 1))
    return edges


def _leaf(ctx, assign, members):
    ctx.explored += 1
    n_c = len(ctx.problem.control.cells)
    V = rank_assignment(n_c, _edges(ctx, assign, members), ctx.problem.goal_controls, ctx.problem.rank_bound)
    if V is None:
        return None
    return assign, V, members


def _search(ctx, assign, seeds):
    members, pending = _members(ctx, assign, seeds)
    if members is None:
        return None
    if pending is None:
        if ctx.k == 1:
            return _leaf(ctx, assign, members)
        # k-step paths may pass through cells whose control is not yet fixed
        free = [c for c in range(len(ctx.problem.control.cells)) if c not in assign]
        for combo in itertools.product(range(ctx.table.n_inputs), repeat=len(free)):
            res = _leaf(ctx, {**assign, **dict(zip(free, combo))}, members)
            if res is not None:
                return res
        return None
    c = ctx.classes.control_of[pending]
    for i in range(ctx.table.n_inputs):
        res = _search(ctx, {**assign, c: i}, members)
        if res is not None:
            return res
    return None


def brute_force(problem: Problem, table: SuccessorTable, variant: str, k: int = 1,
                partition: "Partition | None" = None, classes: "CellClasses | None" = None) -> SolverOutcome:
    """Decide the chosen rule system by enumerating controllers.

    Membership is the least closed set containing the Init cells (any model's member set
    contains it, and every constraint is monotone in membership), and ranks come from a
    longest-path layering, so only input tables are enumerated.
    """
    n_c = len(problem.control.cells)
    if n_c > MAX_CONTROL or table.n_inputs > MAX_INPUTS:
        raise BudgetExceeded(f"brute force handles |C| <= {MAX_CONTROL} and |U| <= {MAX_INPUTS}, "
                             f"got |C| = {n_c}, |U| = {table.n_inputs}")
    if k < 1:
        raise ValueError("k must be >= 1")
    if classes is None:
        if partition is None:
            raise ValueError("brute_force needs the partition or its cell classes")
        classes = classify(problem, partition)
    closure, ranks = _variant_rows(table, variant)
    ctx = _Ctx(problem, table, classes, closure, ranks, k)
    t0 = time.monotonic()
    if any(p not in classes.safe for p in classes.init):
        res = None
    else:
        res = _search(ctx, {}, classes.init)
    wall = time.monotonic() - t0
    if res is None:
        return SolverOutcome("unsat", None, wall, output=f"explored {ctx.explored} controllers")
    assign, V, members = res
    cert = None
    if partition is not None:
        ctrl = Controller(tuple(assign.get(c, 0) for c in range(n_c)))
        cert = Certificate(ctrl, RankingFunction(tuple(V), max(V, default=0)), frozenset(members),
                           partition, variant, k, problem_hash(problem))
    return SolverOutcome("sat", "", wall, output=f"explored {ctx.explored} controllers", certificate=cert)
