"""Certificate checking, closed-loop simulation and perturbation probing.

The checker works directly on exact images (``geometry.affine_image`` / ``intersects``)
and does not reuse the successor tables, so a bug in the table or encoding code cannot
make a bad certificate pass.
"""
from __future__ import annotations

import hashlib
import json
import random
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .geometry import Partition, affine_image, as_vector, covered, intersects
from .model import Controller, OutOfDomain, PiecewiseAffineSystem, Problem, RankingFunction

CERT_FORMAT = "reach-synth-cert/1"
OUT = -1


class CertificateError(ValueError):
    pass


@dataclass(frozen=True)
class Certificate:
    controller: Controller
    ranking: RankingFunction
    invariant_cells: frozenset
    partition: Partition
    variant: str = "strengthened"
    k: int = 1
    problem_hash: str = ""

    def to_json(self) -> dict:
        return {
            "format": CERT_FORMAT,
            "variant": self.variant,
            "k": self.k,
            "problem_hash": self.problem_hash,
            "controller": list(self.controller.table),
            "ranks": list(self.ranking.ranks),
            "max_rank": self.ranking.max_rank,
            "invariant_cells": sorted(self.invariant_cells),
            "partition": self.partition.to_json(),
            "partition_hash": self.partition.digest(),
        }

    @classmethod
    def from_json(cls, d: dict) -> "Certificate":
        if not isinstance(d, dict) or d.get("format") != CERT_FORMAT:
            raise CertificateError(f"field 'format' must be '{CERT_FORMAT}'")
        try:
            part = Partition.from_json(d["partition"])
            cert = cls(Controller(tuple(int(v) for v in d["controller"])),
                       RankingFunction(tuple(int(v) for v in d["ranks"]), int(d["max_rank"])),
                       frozenset(int(v) for v in d["invariant_cells"]), part,
                       d.get("variant", "strengthened"), int(d.get("k", 1)), d.get("problem_hash", ""))
        except KeyError as e:
            raise CertificateError(f"missing field {e.args[0]!r}") from None
        except (TypeError, ValueError) as e:
            raise CertificateError(f"malformed certificate: {e}") from None
        if d.get("partition_hash") != part.digest():
            raise CertificateError(f"partition hash mismatch: recorded {d.get('partition_hash')!r}, "
                                   f"cells hash to {part.digest()!r}")
        bad = [p for p in cert.invariant_cells if not 0 <= p < len(part)]
        if bad:
            raise CertificateError(f"invariant cells {bad} outside the partition")
        return cert

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_json(), sort_keys=True).encode()).hexdigest()[:16]


@dataclass(frozen=True)
class RuleViolation:
    rule: str
    message: str
    cells: tuple = ()


@dataclass
class RuleReport:
    violations: list = field(default_factory=list)
    checked_cells: int = 0

    @property
    def ok(self) -> bool:
        return not self.violations

    def rules(self) -> set:
        return {v.rule for v in self.violations}

    def add(self, rule, message, *cells):
        self.violations.append(RuleViolation(rule, message, tuple(cells)))

    def to_json(self) -> dict:
        by_rule: dict = {}
        for v in self.violations:
            by_rule.setdefault(v.rule, []).append({"message": v.message, "cells": list(v.cells)})
        return {"ok": self.ok, "checked_cells": self.checked_cells, "violations": by_rule}


# --------------------------------------------------------------------------- exact successors


class ExactSuccessors:
    """Cells met by the exact closed-loop image of each partition cell (closed semantics)."""

    def __init__(self, sys: PiecewiseAffineSystem, partition: Partition, control: "Partition | None" = None):
        self.sys = sys
        self.cells = partition.cells
        self.control = control
        self.lo = np.array([[float(v) for v in c.lo] for c in self.cells])
        self.hi = np.array([[float(v) for v in c.hi] for c in self.cells])
        self._memo: dict = {}

    def __call__(self, p: int, i: int) -> frozenset:
        key = (p, i)
        hit = self._memo.get(key)
        if hit is not None:
            return hit
        X = self.sys.state_space
        out = set()
        u = self.sys.inputs[i]
        for l, sub in self.sys.pieces(self.cells[p], self._governed_elsewhere(p)):
            dyn = self.sys.locations[l].dynamics
            img = affine_image(sub, dyn.A, dyn.offset(u))
            bb = img.bounding_box()
            if not X.contains_box(bb):
                out.add(OUT)
            blo = np.array([float(v) for v in bb.lo]) - 1e-9
            bhi = np.array([float(v) for v in bb.hi]) + 1e-9
            for q in np.nonzero(np.all((self.lo <= bhi) & (blo <= self.hi), axis=1))[0]:
                q = int(q)
                if q not in out and intersects(img, self.cells[q]):
                    out.add(q)
        res = frozenset(out)
        self._memo[key] = res
        return res


    def _governed_elsewhere(self, p):
        # points on faces shared with a lower-indexed control cell follow that cell's input
        if self.control is None:
            return ()
        cell = self.cells[p]
        own = next(c for c, cc in enumerate(self.control.cells) if cc.contains_box(cell))
        return [cc for cc in self.control.cells[:own] if cc.intersects_box(cell)]


def _control_cells(problem: Problem, partition: Partition) -> list:
    ctl = []
    for p, cell in enumerate(partition.cells):
        owner = [c for c, cc in enumerate(problem.control.cells) if cc.contains_box(cell)]
        if not owner:
            raise CertificateError(f"partition cell {p} is not inside a control cell")
        ctl.append(owner[0])
    return ctl


def reach_closure(succ, choice, seeds) -> frozenset:
    seen = set(seeds)
    stack = list(seen)
    while stack:
        p = stack.pop()
        if p == OUT:
            continue
        for q in succ(p, choice[p]):
            if q not in seen:
                seen.add(q)
                stack.append(q)
    return frozenset(seen)


def check_exact_rules(problem: Problem, cert: Certificate, system: "PiecewiseAffineSystem | None" = None,
                      succ: "ExactSuccessors | None" = None) -> RuleReport:
    """Every violated instance of the basic rules R1..R6 for ``cert`` on ``problem``.

    ``system`` substitutes the dynamics (used for perturbed models); the sets, partitions
    and the certificate stay the same.
    """
    sys = system or problem.system
    part = cert.partition
    rep = RuleReport()
    n_c = len(problem.control.cells)
    if len(cert.controller) != n_c or len(cert.ranking.ranks) != n_c:
        rep.add("shape", f"certificate covers {len(cert.controller)} control cells, problem has {n_c}")
        return rep
    if any(not 0 <= u < sys.n_inputs for u in cert.controller.table):
        rep.add("shape", "controller selects an input index that does not exist")
        return rep
    ctl = _control_cells(problem, part)
    succ = succ or ExactSuccessors(sys, part, problem.control)
    inv = cert.invariant_cells
    V = cert.ranking.ranks
    goal_c = problem.goal_controls
    goal_p = {p for p in range(len(part)) if ctl[p] in goal_c}
    choice = [cert.controller[c] for c in ctl]

    for p, cell in enumerate(part.cells):
        if covered(cell, problem.init) and p not in inv:
            rep.add("R1", f"init cell {p} is not in Inv", p)
    for c in range(n_c):
        if (V[c] == 0) != (c in goal_c):
            what = "goal cell has nonzero rank" if c in goal_c else "non-goal cell has rank 0"
            rep.add("R4", f"control cell {c}: {what} ({V[c]})", c)
        if V[c] < 0:
            rep.add("R4", f"control cell {c} has negative rank {V[c]}", c)
    for p in sorted(inv):
        rep.checked_cells += 1
        if not covered(part.cells[p], problem.safe):
            rep.add("R3", f"Inv cell {p} is not safe", p)
        nxt = succ(p, choice[p])
        if OUT in nxt:
            rep.add("R2", f"image of Inv cell {p} leaves the state space", p)
        for q in sorted(nxt - inv - {OUT}):
            rep.add("R2", f"image of Inv cell {p} meets cell {q} outside Inv", p, q)
        if p in goal_p:
            continue
        c = ctl[p]
        for q in sorted(nxt - {OUT}):
            if V[c] < V[ctl[q]]:
                rep.add("R5", f"rank rises from {V[c]} (cell {p}) to {V[ctl[q]]} (cell {q})", p, q)
        frontier = {p}
        for _ in range(cert.k):
            nf = set()
            for q in frontier:
                nf.update({q} if q == OUT or q in goal_p else succ(q, choice[q]))
            frontier = nf
        for q in sorted(frontier - {OUT}):
            if not V[c] > V[ctl[q]]:
                rep.add("R6", f"rank does not drop over {cert.k} step(s): cell {p} ({V[c]}) -> cell {q} "
                              f"({V[ctl[q]]})", p, q)
    return rep


# --------------------------------------------------------------------------- simulation


@dataclass(frozen=True)
class SimResult:
    trace: tuple
    safe_ok: bool
    progress_ok: bool
    violation_step: "int | None"
    reason: str = ""


def default_horizon(problem: Problem, cert: "Certificate | None" = None) -> int:
    vmax = max(cert.ranking.ranks) if cert is not None and cert.ranking.ranks else problem.rank_bound
    return max(1, problem.k * max(1, vmax) * len(problem.control.cells))


def simulate(problem: Problem, controller: Controller, x0, horizon: "int | None" = None,
             stop_at_goal: bool = True) -> SimResult:
    """Run the closed loop from ``x0`` in exact arithmetic."""
    x = as_vector(x0)
    horizon = default_horizon(problem) if horizon is None else horizon
    trace = [x]
    reached = problem.in_goal(x)
    if not problem.in_safe(x):
        return SimResult(tuple(trace), False, reached, 0, "initial state unsafe")
    if reached and stop_at_goal:
        return SimResult(tuple(trace), True, True, None)
    for t in range(1, horizon + 1):
        try:
            x = problem.system.step(x, controller[problem.control_of(x)])
        except OutOfDomain as e:
            return SimResult(tuple(trace), False, reached, t, str(e))
        trace.append(x)
        if not problem.system.state_space.contains_point(x):
            return SimResult(tuple(trace), False, reached, t, "left the state space")
        if not problem.in_safe(x):
            return SimResult(tuple(trace), False, reached, t, "entered the unsafe set")
        if problem.in_goal(x):
            reached = True
            if stop_at_goal:
                break
    return SimResult(tuple(trace), True, reached, None if reached else horizon,
                     "" if reached else "goal not reached within horizon")


def sample_init(problem: Problem, runs: int, seed: int, bits: int = 20) -> list:
    """Dyadic rational points drawn uniformly from Init (boxes weighted by volume).

    Lower-dimensional boxes get weight by their positive widths so point-like Init sets
    still sample.
    """
    rng = random.Random(seed)
    weights = []
    for b in problem.init:
        w = Fraction(1)
        for d in b.widths:
            w *= d if d > 0 else 1
        weights.append(float(w))
    den = 1 << bits
    pts = []
    for _ in range(runs):
        b = rng.choices(problem.init, weights=weights)[0]
        pts.append(tuple(lo + (hi - lo) * Fraction(rng.randint(0, den), den) for lo, hi in zip(b.lo, b.hi)))
    return pts


@dataclass
class MonteCarloReport:
    runs: int
    horizon: int
    safety_failures: int
    progress_failures: int
    max_steps: int
    first_failure: "tuple | None" = None
    seed: int = 0

    @property
    def ok(self) -> bool:
        return self.safety_failures == 0 and self.progress_failures == 0

    def to_json(self) -> dict:
        return {"runs": self.runs, "horizon": self.horizon, "seed": self.seed,
                "safety_failures": self.safety_failures, "progress_failures": self.progress_failures,
                "max_steps": self.max_steps,
                "first_failure": None if self.first_failure is None else [str(v) for v in self.first_failure]}


def _member(lo, hi, x):
    """(points, boxes) closed-membership matrix."""
    return np.all((lo[None, :, :] <= x[:, None, :]) & (x[:, None, :] <= hi[None, :, :]), axis=2)


def _bounds(boxes):
    n = len(boxes[0].lo) if boxes else 0
    lo = np.array([[float(v) for v in b.lo] for b in boxes]).reshape(len(boxes), n)
    hi = np.array([[float(v) for v in b.hi] for b in boxes]).reshape(len(boxes), n)
    return lo, hi


def _any_member(lo, hi, x, chunk=256):
    if len(lo) == 0:
        return np.zeros(len(x), dtype=bool)
    out = np.zeros(len(x), dtype=bool)
    for s in range(0, len(lo), chunk):
        out |= _member(lo[s:s + chunk], hi[s:s + chunk], x).any(axis=1)
    return out


def _first_member(lo, hi, x, chunk=256):
    idx = np.full(len(x), -1)
    for s in range(0, len(lo), chunk):
        m = _member(lo[s:s + chunk], hi[s:s + chunk], x)
        hit = m.any(axis=1) & (idx < 0)
        idx[hit] = s + m[hit].argmax(axis=1)
    return idx


def monte_carlo(problem: Problem, controller: Controller, runs: int = 10_000, seed: int = 0,
                horizon: "int | None" = None) -> MonteCarloReport:
    """Vectorized float64 closed-loop simulation from random Init points.

    Initial points are dyadic, so systems with dyadic coefficients evolve without rounding.
    """
    sys = problem.system
    horizon = default_horizon(problem) if horizon is None else horizon
    x0 = sample_init(problem, runs, seed)
    x = np.array([[float(v) for v in p] for p in x0]).reshape(runs, sys.dim)
    loc_lo, loc_hi = _bounds([l.invariant for l in sys.locations])
    c_lo, c_hi = _bounds(problem.control.cells)
    s_lo, s_hi = _bounds(problem.safe)
    g_lo, g_hi = _bounds(problem.goal)
    X_lo = np.array([float(v) for v in sys.state_space.lo])
    X_hi = np.array([float(v) for v in sys.state_space.hi])
    A = np.array([[[float(v) for v in r] for r in l.dynamics.A] for l in sys.locations])
    off = np.array([[[float(v) for v in l.dynamics.offset(u)] for u in sys.inputs] for l in sys.locations])
    table = np.array(controller.table)

    active = np.ones(runs, dtype=bool)
    failed = np.zeros(runs, dtype=bool)
    reached = _any_member(g_lo, g_hi, x)
    failed |= ~_any_member(s_lo, s_hi, x)
    active &= ~reached & ~failed
    steps = np.zeros(runs, dtype=int)
    for t in range(1, horizon + 1):
        if not active.any():
            break
        ids = np.nonzero(active)[0]
        xa = x[ids]
        loc = _first_member(loc_lo, loc_hi, xa)
        cid = _first_member(c_lo, c_hi, xa)
        bad = (loc < 0) | (cid < 0)
        u = table[np.maximum(cid, 0)]
        L = np.maximum(loc, 0)
        xn = np.einsum("kij,kj->ki", A[L], xa) + off[L, u]
        x[ids] = xn
        steps[ids] = t
        in_x = np.all((X_lo <= xn) & (xn <= X_hi), axis=1)
        bad |= ~in_x | ~_any_member(s_lo, s_hi, xn)
        failed[ids[bad]] = True
        hit = ~bad & _any_member(g_lo, g_hi, xn)
        reached[ids[hit]] = True
        active[ids[bad | hit]] = False
    n_fail = int(failed.sum())
    n_prog = int((~reached & ~failed).sum())
    first = None
    bad_runs = np.nonzero(failed | ~reached)[0]
    if len(bad_runs):
        first = x0[int(bad_runs[0])]
    return MonteCarloReport(runs, horizon, n_fail, n_prog, int(steps.max(initial=0)), first, seed)


# --------------------------------------------------------------------------- robustness


@dataclass
class RobustnessReport:
    epsilon: Fraction
    samples: int
    passed: int
    first_failure: "tuple | None" = None
    first_failure_rules: tuple = ()

    @property
    def pass_fraction(self) -> float:
        return self.passed / self.samples if self.samples else 1.0

    @property
    def ok(self) -> bool:
        return self.passed == self.samples

    def to_json(self) -> dict:
        return {"epsilon": str(self.epsilon), "samples": self.samples, "passed": self.passed,
                "pass_fraction": self.pass_fraction, "evidence": "sampled, not a decision",
                "first_failure": None if self.first_failure is None
                else [[str(v) for v in d] for d in self.first_failure],
                "first_failure_rules": list(self.first_failure_rules)}


def perturbation_offsets(sys: PiecewiseAffineSystem, epsilon, samples: int, seed: int = 0,
                         bits: int = 16) -> list:
    """Per-location constant offsets with sup-norm exactly ``epsilon``.

    The 2n axis-extreme offsets (the same ``±epsilon e_j`` on every location) come first,
    then ``samples`` random directions.
    """
    eps = Fraction(epsilon)
    n, L = sys.dim, len(sys.locations)
    zero = tuple(Fraction(0) for _ in range(n))
    if eps == 0:
        return [tuple(zero for _ in range(L))]
    out = []
    for j in range(n):
        for s in (1, -1):
            d = tuple(s * eps if a == j else Fraction(0) for a in range(n))
            out.append(tuple(d for _ in range(L)))
    rng = random.Random(seed)
    den = 1 << bits
    for _ in range(samples):
        per = []
        for _l in range(L):
            v = [Fraction(rng.randint(-den, den), den) for _ in range(n)]
            m = max(abs(a) for a in v)
            if m == 0:
                v[0], m = Fraction(1), Fraction(1)
            per.append(tuple(a / m * eps for a in v))
        out.append(tuple(per))
    return out


def probe_robustness(problem: Problem, cert: Certificate, epsilon, samples: int = 32,
                     seed: int = 0) -> RobustnessReport:
    """Recheck the rules with the same controller and ranks on sampled perturbed models.

    Inv is recomputed per sample as the reach closure of the Init cells.
    """
    part = cert.partition
    ctl = _control_cells(problem, part)
    choice = [cert.controller[c] for c in ctl]
    init = [p for p, cell in enumerate(part.cells) if covered(cell, problem.init)]
    offsets = perturbation_offsets(problem.system, epsilon, samples, seed)
    passed, first, first_rules = 0, None, ()
    for off in offsets:
        sys2 = problem.system.perturbed(off)
        succ = ExactSuccessors(sys2, part, problem.control)
        inv = reach_closure(succ, choice, init)
        if OUT in inv:
            ok, rules = False, ("R2",)
        else:
            trial = Certificate(cert.controller, cert.ranking, inv, part, cert.variant, cert.k, cert.problem_hash)
            rep = check_exact_rules(problem, trial, system=sys2, succ=succ)
            ok, rules = rep.ok, tuple(sorted(rep.rules()))
        if ok:
            passed += 1
        elif first is None:
            first, first_rules = off, rules
    return RobustnessReport(Fraction(epsilon), len(offsets), passed, first, first_rules)
