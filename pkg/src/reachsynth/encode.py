"""SMT-LIB 2 encodings of the synthesis rules over a successor table.

Three rule systems share one layout and differ only in which successor sets feed the
invariant-closure rules and the ranking rules:

=============  ==============  ============
variant        closure uses    ranking uses
=============  ==============  ============
weakened       under           under
exact          under (exact)   over
strengthened   over            over
=============  ==============  ============

Variables: ``u_<c>`` (input index of control cell c), ``v_<c>`` (rank of c), ``m_<p>``
(partition cell p belongs to the Must/Inv/May set) and ``m_out`` for the pseudo-cell
outside the state space, which is never a member.
"""
from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass, field
from typing import Iterator

from .certify import Certificate
from .geometry import Partition
from .model import CellClasses, Controller, Problem, RankingFunction, classify
from .post import OUT, SuccessorTable, exactly_aligned

VARIANTS = ("exact", "weakened", "strengthened")
MAX_K = 3


class EncodingError(ValueError):
    pass


class DecodeError(ValueError):
    pass


@dataclass(frozen=True)
class EncodedProblem:
    smtlib_text: str
    variant: str
    k: int
    decode_map: dict
    n_assertions: int
    predicted_assertions: int
    partition: Partition
    problem_hash: str
    counts: dict = field(default_factory=dict)

    def digest(self) -> str:
        return hashlib.sha256(self.smtlib_text.encode()).hexdigest()[:16]


def problem_hash(problem: Problem) -> str:
    from .serial import problem_to_json

    blob = json.dumps(problem_to_json(problem), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _rows(table: SuccessorTable, variant: str):
    if variant == "weakened":
        return table.under, table.under
    if variant == "exact":
        return table.under, table.over
    if variant == "strengthened":
        return table.over, table.over
    raise EncodingError(f"unknown variant {variant!r}; expected one of {VARIANTS}")


def _rank_targets(rank_rows, ctl, goal, p, first_input, k) -> set:
    """(guard, target control) pairs for the k-step decrease rule from cell p.

    A guard is a sorted tuple of (control cell, input) choices taken along the path.
    Goal cells absorb: a path that enters Goal stays there.
    """
    out = set()
    start = ((ctl[p], first_input),)

    def walk(q, guard, steps):
        if steps == k or q == OUT or q in goal:
            if q != OUT:
                out.add((guard, ctl[q]))
            return
        assigned = dict(guard)
        c = ctl[q]
        for i in range(len(rank_rows[q])):
            if c in assigned and assigned[c] != i:
                continue
            g = guard if c in assigned else tuple(sorted(guard + ((c, i),)))
            for r in rank_rows[q][i]:
                walk(r, g, steps + 1)

    for q in rank_rows[p][first_input]:
        walk(q, start, 1)
    return out


def _assertions(problem: Problem, table: SuccessorTable, classes: CellClasses, variant: str,
                k: int) -> Iterator[tuple[str, str]]:
    closure_rows, rank_rows = _rows(table, variant)
    n_c = len(problem.control.cells)
    n_u = table.n_inputs
    ctl = classes.control_of
    goal_c = problem.goal_controls
    goal_p = classes.goal
    vmax = problem.rank_bound

    def m(q):
        return "m_out" if q == OUT else f"m_{q}"

    for c in range(n_c):
        yield "bounds", f"(and (>= u_{c} 0) (<= u_{c} {n_u - 1}))"
        yield "bounds", f"(and (>= v_{c} 0) (<= v_{c} {vmax}))"
    yield "out", "(not m_out)"
    for p in sorted(classes.init):
        yield "init", f"m_{p}"
    for p in range(table.n_cells):
        if p not in classes.safe:
            yield "safe", f"(not m_{p})"
    for c in range(n_c):
        yield "goal-rank", f"(= v_{c} 0)" if c in goal_c else f"(>= v_{c} 1)"
    for p in range(table.n_cells):
        c = ctl[p]
        for i in range(n_u):
            guard = f"(and m_{p} (= u_{c} {i}))"
            targets = [q for q in closure_rows[p][i] if q != p]
            if table.escapes(p, i) and OUT not in targets:
                targets.insert(0, OUT)
            for q in targets:
                yield "closure", f"(=> {guard} {m(q)})"
            if p in goal_p:
                continue
            tgt = sorted({ctl[q] for q in rank_rows[p][i] if q != OUT})
            for t in tgt:
                if t != c:
                    yield "nonincrease", f"(=> {guard} (>= v_{c} v_{t}))"
            if k == 1:
                for t in tgt:
                    yield "decrease", f"(not {guard})" if t == c else f"(=> {guard} (> v_{c} v_{t}))"
            else:
                for g, t in sorted(_rank_targets(rank_rows, ctl, goal_p, p, i, k)):
                    conj = " ".join(f"(= u_{gc} {gi})" for gc, gi in g)
                    g_txt = f"(and m_{p} {conj})"
                    yield "decrease", f"(not {g_txt})" if t == c else f"(=> {g_txt} (> v_{c} v_{t}))"


def predict_assertions(problem: Problem, table: SuccessorTable, classes: CellClasses, variant: str,
                       k: int = 1) -> dict:
    """Assertion counts per rule family from table statistics alone (no text generation)."""
    closure_rows, rank_rows = _rows(table, variant)
    n_c = len(problem.control.cells)
    ctl = classes.control_of
    counts = {"bounds": 2 * n_c, "out": 1, "init": len(classes.init),
              "safe": table.n_cells - len(classes.safe), "goal-rank": n_c,
              "closure": 0, "nonincrease": 0, "decrease": 0}
    for p in range(table.n_cells):
        for i in range(table.n_inputs):
            row = closure_rows[p][i]
            counts["closure"] += len(row) - (p in row) + (table.escapes(p, i) and OUT not in row)
            if p in classes.goal:
                continue
            tgt = {ctl[q] for q in rank_rows[p][i] if q != OUT}
            counts["nonincrease"] += len(tgt - {ctl[p]})
            if k == 1:
                counts["decrease"] += len(tgt)
            else:
                counts["decrease"] += len(_rank_targets(rank_rows, ctl, classes.goal, p, i, k))
    counts["total"] = sum(counts.values())
    return counts


def encode(problem: Problem, partition: Partition, table: SuccessorTable, variant: str,
           classes: "CellClasses | None" = None, k: "int | None" = None) -> EncodedProblem:
    k = problem.k if k is None else k
    if k < 1:
        raise EncodingError("k must be >= 1")
    if k > MAX_K:
        raise EncodingError(f"k={k} exceeds the supported maximum of {MAX_K}: "
                            "path enumeration grows as |U|^k per cell")
    if variant not in VARIANTS:
        raise EncodingError(f"unknown variant {variant!r}; expected one of {VARIANTS}")
    if table.partition_id != partition.digest():
        raise EncodingError("successor table was built for a different partition")
    if classes is None:
        classes = classify(problem, partition)
    if variant == "exact" and not exactly_aligned(problem.system, partition, table, problem.control):
        raise EncodingError("exact encoding needs every cell image to be a union of partition cells; "
                            "this partition is not aligned (use the weakened/strengthened pair)")
    n_c = len(problem.control.cells)
    phash = problem_hash(problem)
    body, counts = [], {}
    for kind, expr in _assertions(problem, table, classes, variant, k):
        counts[kind] = counts.get(kind, 0) + 1
        body.append(f"(assert {expr})")
    predicted = predict_assertions(problem, table, classes, variant, k)["total"]
    decode_map = {}
    decls = []
    for c in range(n_c):
        decls.append(f"(declare-const u_{c} Int)")
        decode_map[f"u_{c}"] = ("input", c)
    for c in range(n_c):
        decls.append(f"(declare-const v_{c} Int)")
        decode_map[f"v_{c}"] = ("rank", c)
    for p in range(table.n_cells):
        decls.append(f"(declare-const m_{p} Bool)")
        decode_map[f"m_{p}"] = ("member", p)
    decls.append("(declare-const m_out Bool)")
    header = [
        f"; reach-synth encoding variant={variant}",
        f"; problem={phash} partition={partition.digest()}",
        f"; control_cells={n_c} partition_cells={table.n_cells} inputs={table.n_inputs} k={k}",
        f"; assertions={len(body)} predicted={predicted}",
        "(set-option :produce-models true)",
        "(set-logic QF_LIA)",
    ]
    text = "\n".join(header + decls + body + ["(check-sat)", "(get-model)", ""])
    return EncodedProblem(text, variant, k, decode_map, len(body), predicted, partition, phash, counts)


def encode_weakened(problem, table, partition, classes=None, k=None) -> EncodedProblem:
    return encode(problem, partition, table, "weakened", classes, k)


def encode_strengthened(problem, table, partition, classes=None, k=None) -> EncodedProblem:
    return encode(problem, partition, table, "strengthened", classes, k)


def encode_exact(problem, table, partition, classes=None, k=None) -> EncodedProblem:
    return encode(problem, partition, table, "exact", classes, k)


# --------------------------------------------------------------------------- model decoding

_TOKEN = re.compile(r"\(|\)|\"(?:[^\"]|\"\")*\"|\|[^|]*\||[^\s()]+")


def parse_sexprs(text: str) -> list:
    stack: list[list] = [[]]
    for tok in _TOKEN.findall(text):
        if tok == "(":
            stack.append([])
        elif tok == ")":
            if len(stack) == 1:
                raise DecodeError("unbalanced ')' in solver output")
            done = stack.pop()
            stack[-1].append(done)
        else:
            stack[-1].append(tok)
    if len(stack) != 1:
        raise DecodeError("unbalanced '(' in solver output")
    return stack[0]


def _value(v):
    if isinstance(v, list):
        if len(v) == 2 and v[0] == "-":
            return -_value(v[1])
        raise DecodeError(f"unsupported value {v}")
    if v == "true":
        return True
    if v == "false":
        return False
    return int(v)


def model_values(model_text: str) -> dict:
    values = {}

    def visit(node):
        if isinstance(node, list):
            if len(node) == 5 and node[0] == "define-fun" and node[2] == []:
                values[node[1].strip("|")] = _value(node[4])
            else:
                for child in node:
                    visit(child)

    visit(parse_sexprs(model_text))
    return values


def decode_model(encoded: EncodedProblem, solver_model_text: str) -> Certificate:
    values = model_values(solver_model_text)
    n_c = sum(1 for kind, _ in encoded.decode_map.values() if kind == "input")
    inputs, ranks, members = [None] * n_c, [None] * n_c, set()
    for name, (kind, idx) in encoded.decode_map.items():
        if name not in values:
            raise DecodeError(f"solver model has no assignment for {name}")
        val = values[name]
        if kind == "input":
            inputs[idx] = val
        elif kind == "rank":
            ranks[idx] = val
        elif val:
            members.add(idx)
    return Certificate(
        controller=Controller(tuple(inputs)),
        ranking=RankingFunction(tuple(ranks), max(ranks, default=0)),
        invariant_cells=frozenset(members),
        partition=encoded.partition,
        variant=encoded.variant,
        k=encoded.k,
        problem_hash=encoded.problem_hash,
    )
