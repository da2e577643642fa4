"""Shared corpus builders for the oracle and property suites."""
from __future__ import annotations

import random
from dataclasses import dataclass, field

from reachsynth.bench import random_instance
from reachsynth.certify import check_exact_rules
from reachsynth.encode import decode_model, encode
from reachsynth.model import classify
from reachsynth.post import build_table, exactly_aligned
from reachsynth.solver import brute_force, solve
from reachsynth.synth import init_partition

VARIANTS = ("weakened", "strengthened")


@dataclass
class CaseResult:
    seed: int
    name: str
    cells: int
    aligned: bool
    smt: dict = field(default_factory=dict)
    oracle: dict = field(default_factory=dict)
    cert_failures: list = field(default_factory=list)
    problem: object = None
    certificates: list = field(default_factory=list)

    def disagreements(self):
        return [v for v in self.smt if self.smt[v] != self.oracle[v]]


def corpus_case(seed: int, cfg=None) -> CaseResult:
    rng = random.Random(seed)
    problem = random_instance(rng)
    splits = 1 if rng.random() < 0.25 and problem.system.dim == 1 else 0
    part = init_partition(problem, splits)
    table = build_table(problem.system, part, problem.control)
    classes = classify(problem, part)
    aligned = exactly_aligned(problem.system, part, table, problem.control)
    res = CaseResult(seed, problem.name, len(part), aligned, problem=problem)
    for variant in VARIANTS + (("exact",) if aligned else ()):
        enc = encode(problem, part, table, variant, classes)
        out = solve(enc, cfg)
        res.smt[variant] = out.status
        res.oracle[variant] = brute_force(problem, table, variant, partition=part, classes=classes).status
        if out.status == "sat" and variant == "strengthened":
            cert = decode_model(enc, out.model_text)
            rep = check_exact_rules(problem, cert)
            res.certificates.append(cert)
            if not rep.ok:
                res.cert_failures.append(sorted(rep.rules()))
    return res


def ordering_violations(res: CaseResult) -> list[str]:
    order = [res.smt.get("strengthened"), res.smt.get("exact"), res.smt.get("weakened")]
    out = []
    if order[0] == "sat" and order[1] not in (None, "sat"):
        out.append("strengthened sat but exact not")
    if order[1] == "sat" and order[2] != "sat":
        out.append("exact sat but weakened not")
    if order[0] == "sat" and order[2] != "sat":
        out.append("strengthened sat but weakened not")
    return out
