"""The refine-and-solve synthesis loop and partition refinement strategies."""
from __future__ import annotations

import json
import time
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .certify import Certificate, RuleReport, check_exact_rules
from .encode import EncodingError, decode_model, encode
from .geometry import Partition, split_cells, union_covers
from .model import CellClasses, Problem, classify, validate
from .post import OUT, SuccessorTable, build_table, cell_choices, fixed_point
from .solver import SolverConfig, SolverConfigError, solve

STRATEGIES = ("uniform", "must_guided", "complement_guided", "heuristic")
_ALIASES = {"must": "must_guided", "complement": "complement_guided"}


class ProblemError(ValueError):
    pass


@dataclass(frozen=True)
class RefinementStrategy:
    kind: str = "must_guided"
    proximity_threshold: int = 1
    fairness_period: "int | None" = None  # defaults to the state dimension

    def __post_init__(self):
        kind = _ALIASES.get(self.kind, self.kind)
        if kind not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.kind!r}; choose from {STRATEGIES}")
        object.__setattr__(self, "kind", kind)
        if self.proximity_threshold < 0:
            raise ValueError("proximity_threshold must be >= 0")


@dataclass(frozen=True)
class Budget:
    max_iters: int = 12
    max_cells: int = 20_000
    wallclock: float = 600.0


@dataclass
class IterationRecord:
    iteration: int
    partition_id: str
    cells: int
    resolution: str
    w_status: str
    s_status: str
    w_assertions: int
    s_assertions: int
    action: str
    split: int
    timings: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return asdict(self)


@dataclass
class Verdict:
    kind: str  # SAT | UNSAT | UNKNOWN
    certificate: "Certificate | None" = None
    partition_id: str = ""
    w_encoding_hash: str = ""
    reason: str = ""
    report: "RuleReport | None" = None

    def to_json(self) -> dict:
        return {"kind": self.kind, "partition_id": self.partition_id, "w_encoding_hash": self.w_encoding_hash,
                "reason": self.reason, "certificate_hash": self.certificate.digest() if self.certificate else None}


@dataclass
class SynthesisRun:
    iterations: list = field(default_factory=list)
    final: "Verdict | None" = None
    partitions: list = field(default_factory=list)


# --------------------------------------------------------------------------- partitions


def widest_axes(cell, count: int) -> list[int]:
    """Up to ``count`` distinct non-degenerate axes, widest first, lowest index on ties."""
    order = sorted((i for i, w in enumerate(cell.widths) if w > 0), key=lambda i: (-cell.widths[i], i))
    return order[:count]


def init_partition(problem: Problem, splits_per_cell: int = 2) -> Partition:
    """Bisect every control cell on its ``splits_per_cell`` widest axes."""
    if splits_per_cell < 0:
        raise ValueError("splits_per_cell must be >= 0")
    C = problem.control
    if splits_per_cell == 0:
        return Partition(C.cells, C.domain)
    plan = {cid: widest_axes(c, splits_per_cell) for cid, c in enumerate(C.cells)}
    p = split_cells(Partition(C.cells, C.domain), plan)
    return Partition(p.cells, p.domain)


def adjacency(partition: Partition) -> list[list[int]]:
    """Cells sharing at least a boundary point (closed intersection)."""
    cells = partition.cells
    lo = np.array([[float(v) for v in c.lo] for c in cells])
    hi = np.array([[float(v) for v in c.hi] for c in cells])
    out = [[] for _ in cells]
    for i in range(len(cells)):
        for j in np.nonzero(np.all((lo[i] <= hi + 1e-12) & (lo <= hi[i] + 1e-12), axis=1))[0]:
            j = int(j)
            if j != i and cells[i].intersects_box(cells[j]):
                out[i].append(j)
    return out


def near_unsafe(partition: Partition, classes: CellClasses, cells, threshold: int) -> bool:
    """Does any of ``cells`` lie within ``threshold`` adjacency hops of an unsafe cell?"""
    targets = set(cells)
    if not targets:
        return False
    adj = adjacency(partition)
    dist = {p: 0 for p in range(len(partition)) if p not in classes.safe}
    queue = deque(dist)
    while queue:
        p = queue.popleft()
        if p in targets:
            return True
        if dist[p] == threshold:
            continue
        for q in adj[p]:
            if q not in dist:
                dist[q] = dist[p] + 1
                queue.append(q)
    return False


def select_cells(partition: Partition, must_cells, strategy: RefinementStrategy,
                 classes: "CellClasses | None" = None) -> tuple[str, set]:
    """(effective strategy, cells to split)."""
    kind = strategy.kind
    must = {p for p in must_cells if p != OUT}
    if kind == "heuristic":
        if classes is None:
            raise ValueError("heuristic refinement needs the cell classes")
        close = near_unsafe(partition, classes, must, strategy.proximity_threshold)
        kind = "complement_guided" if close else "must_guided"
    everything = set(range(len(partition)))
    if kind == "must_guided":
        chosen = must
    elif kind == "complement_guided":
        chosen = everything - must
    else:
        chosen = everything
    if not chosen:
        return "uniform", everything
    return kind, chosen


def refine(partition: Partition, must_cells, strategy: "RefinementStrategy | str" = "must_guided",
           classes: "CellClasses | None" = None, fair: bool = False) -> Partition:
    """Split the selected cells on their widest axis.

    With ``fair`` every cell of maximal diameter is also split on each axis attaining it,
    so the resolution strictly drops.
    """
    if isinstance(strategy, str):
        strategy = RefinementStrategy(strategy)
    bad = [p for p in must_cells if p != OUT and not 0 <= p < len(partition)]
    if bad:
        raise ValueError(f"cells {bad} are not in the partition")
    _, chosen = select_cells(partition, must_cells, strategy, classes)
    plan = {p: {partition.cells[p].widest_axis()} for p in chosen}
    if fair:
        r = partition.resolution()
        for p, c in enumerate(partition.cells):
            if c.diameter() == r:
                plan.setdefault(p, set()).update(i for i, w in enumerate(c.widths) if w == r)
    return split_cells(partition, {p: sorted(a) for p, a in plan.items()})


# --------------------------------------------------------------------------- Must/May stability under refinement


def _region(partition: Partition, ids) -> tuple[list, bool]:
    return [partition.cells[p] for p in ids if p != OUT], OUT in ids


def same_region(pa: Partition, a, pb: Partition, b) -> bool:
    ra, oa = _region(pa, a)
    rb, ob = _region(pb, b)
    return oa == ob and union_covers(ra, rb) and union_covers(rb, ra)


def fixed_points(problem: Problem, partition: Partition, table: SuccessorTable, controller,
                 classes: CellClasses) -> tuple[frozenset, frozenset]:
    choice = cell_choices(table, controller)
    seeds = classes.init
    return fixed_point(table.under, choice, seeds), fixed_point(table.over, choice, seeds)


def refinement_sets(problem: Problem, controller, partition: Partition) -> dict:
    """Must/May on ``partition`` and on its Must-guided refinement, for a fixed controller."""
    sys = problem.system
    classes = classify(problem, partition)
    table = build_table(sys, partition, problem.control)
    must, may = fixed_points(problem, partition, table, controller, classes)
    fine = refine(partition, must, RefinementStrategy("must_guided"))
    fine_classes = classify(problem, fine, classes)
    fine_table = build_table(sys, fine, problem.control)
    must2, may2 = fixed_points(problem, fine, fine_table, controller, fine_classes)
    return {"partition": partition, "refined": fine, "must": must, "may": may, "must2": must2, "may2": may2}


def check_refinement_stable(problem: Problem, controller, partition: Partition) -> bool:
    """Are the Must and May point sets unchanged by one Must-guided refinement?"""
    s = refinement_sets(problem, controller, partition)
    return (same_region(s["partition"], s["must"], s["refined"], s["must2"])
            and same_region(s["partition"], s["may"], s["refined"], s["may2"]))


check_prop3 = check_refinement_stable


# --------------------------------------------------------------------------- main loop


def _least_must(table, certificate, classes):
    choice = cell_choices(table, certificate.controller)
    return fixed_point(table.under, choice, classes.init)


def synthesize(problem: Problem, cfg: "SolverConfig | None" = None,
               strategy: "RefinementStrategy | str" = "must_guided", budget: "Budget | None" = None, *,
               k: "int | None" = None, splits_per_cell: int = 2, log_path=None, workers: int = 1,
               solve_fn=None, seed: int = 0) -> tuple[Verdict, SynthesisRun]:
    """Alternate strengthened/weakened solves with refinement until a verdict or budget end.

    SAT: the strengthened rules hold and the certificate passed the exact checker.
    UNSAT: the weakened rules failed twice on the same encoding.
    UNKNOWN: budget exhausted or the solver gave no answer.
    """
    errs = validate(problem)
    if errs:
        raise ProblemError("; ".join(str(e) for e in errs))
    if isinstance(strategy, str):
        strategy = RefinementStrategy(strategy)
    budget = budget or Budget()
    cfg = cfg or SolverConfig()
    solve_fn = solve_fn or solve
    k = problem.k if k is None else k
    period = strategy.fairness_period or problem.system.dim
    t_start = time.monotonic()
    run = SynthesisRun()
    log = open(log_path, "w") if log_path else None

    def finish(verdict):
        run.final = verdict
        if log:
            log.write(json.dumps({"final": verdict.to_json(), "seed": seed}) + "\n")
            log.close()
        return verdict, run

    sys = problem.system
    P = init_partition(problem, splits_per_cell)
    classes = classify(problem, P)
    table = build_table(sys, P, problem.control, workers=workers)
    try:
        for it in range(1, budget.max_iters + 1):
            timings = {}
            t0 = time.monotonic()
            enc_w = encode(problem, P, table, "weakened", classes, k)
            enc_s = encode(problem, P, table, "strengthened", classes, k)
            timings["encode"] = time.monotonic() - t0
            t0 = time.monotonic()
            with ThreadPoolExecutor(2) as ex:
                fs = ex.submit(solve_fn, enc_s, cfg)
                fw = ex.submit(solve_fn, enc_w, cfg)
                out_s, out_w = fs.result(), fw.result()
            timings["solve"] = time.monotonic() - t0
            rec = IterationRecord(it, P.digest(), len(P), str(P.resolution()), out_w.status, out_s.status,
                                  enc_w.n_assertions, enc_s.n_assertions, "", 0, timings)
            run.iterations.append(rec)
            run.partitions.append(P.digest())

            def emit():
                if log:
                    log.write(json.dumps(rec.to_json()) + "\n")
                    log.flush()

            if out_s.status == "sat":
                cert = decode_model(enc_s, out_s.model_text)
                report = check_exact_rules(problem, cert)
                rec.action = "return-controller"
                emit()
                if not report.ok:
                    return finish(Verdict("UNKNOWN", cert, P.digest(), reason="strengthened model failed the "
                                          f"exact check: {sorted(report.rules())}", report=report))
                return finish(Verdict("SAT", cert, P.digest(), report=report))
            if out_w.status == "unsat":
                again = solve_fn(enc_w, cfg)
                rec.action = "return-impossible"
                emit()
                if again.status != "unsat":
                    return finish(Verdict("UNKNOWN", None, P.digest(), enc_w.digest(),
                                          f"re-solving the weakened encoding gave {again.status}"))
                return finish(Verdict("UNSAT", None, P.digest(), enc_w.digest(), "weakened rules unsatisfiable"))
            stuck = [o for o in (out_s, out_w) if o.status in ("unknown", "timeout", "crash")]
            if stuck:
                rec.action = "stop"
                emit()
                o = stuck[0]
                return finish(Verdict("UNKNOWN", None, P.digest(),
                                      reason=f"solver {o.status}: {o.stderr_tail[-300:] or o.output[-300:]}"))
            if it == budget.max_iters:
                rec.action = "stop"
                emit()
                return finish(Verdict("UNKNOWN", None, P.digest(), reason=f"max iterations ({budget.max_iters})"))
            if time.monotonic() - t_start > budget.wallclock:
                rec.action = "stop"
                emit()
                return finish(Verdict("UNKNOWN", None, P.digest(), reason=f"wall clock ({budget.wallclock} s)"))
            w_cert = decode_model(enc_w, out_w.model_text)
            must = _least_must(table, w_cert, classes)
            fair = it % period == 0
            kind, chosen = select_cells(P, must, strategy, classes)
            t0 = time.monotonic()
            P2 = refine(P, must, strategy, classes, fair=fair)
            split_ids = {p for p in range(len(P)) if P2.cells[p] != P.cells[p]}
            rec.action = kind + ("+fair" if fair else "")
            rec.split = len(split_ids)
            if len(P2) > budget.max_cells:
                emit()
                return finish(Verdict("UNKNOWN", None, P.digest(),
                                      reason=f"max cells ({budget.max_cells}) exceeded by refinement to {len(P2)}"))
            classes = classify(problem, P2, classes)
            table = build_table(sys, P2, problem.control, previous=(table, split_ids), workers=workers)
            P = P2
            timings["refine"] = time.monotonic() - t0
            emit()
        return finish(Verdict("UNKNOWN", None, P.digest(), reason="no iterations allowed"))
    except (EncodingError, SolverConfigError):
        if log:
            log.close()
        raise
