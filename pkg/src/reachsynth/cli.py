"""``reach-synth`` command line.

Exit codes: 0 SAT / success, 10 UNSAT, 20 UNKNOWN, 2 failed check or simulation, 1 error.
"""
from __future__ import annotations

import argparse
import json
import sys
from fractions import Fraction
from pathlib import Path

from . import bench
from .certify import Certificate, CertificateError, check_exact_rules, monte_carlo, probe_robustness
from .encode import EncodingError, encode
from .model import classify, validate
from .post import build_table
from .render import RenderSpec, render
from .serial import FormatError, dumps, load_problem, problem_to_json
from .solver import SolverConfig, SolverConfigError
from .synth import Budget, ProblemError, RefinementStrategy, init_partition, synthesize

EXIT = {"SAT": 0, "UNSAT": 10, "UNKNOWN": 20}
VARIANT_NAMES = {"exact": "exact", "weak": "weakened", "strong": "strengthened",
                 "weakened": "weakened", "strengthened": "strengthened"}


class UsageError(Exception):
    pass


def _problem(args):
    if getattr(args, "preset", None):
        try:
            return bench.preset(args.preset)
        except KeyError as e:
            raise UsageError(e.args[0]) from None
    if not args.problem:
        raise UsageError("give a problem file or --preset")
    try:
        return load_problem(args.problem)
    except OSError as e:
        raise UsageError(f"cannot read {args.problem}: {e.strerror}") from None


def _certificate(path, problem=None):
    try:
        doc = json.loads(Path(path).read_text())
    except OSError as e:
        raise UsageError(f"cannot read {path}: {e.strerror}") from None
    except json.JSONDecodeError as e:
        raise CertificateError(f"invalid JSON in {path}: {e}") from None
    cert = Certificate.from_json(doc)
    if problem is not None:
        from .encode import problem_hash

        if cert.problem_hash and cert.problem_hash != problem_hash(problem):
            raise CertificateError(f"certificate was issued for problem {cert.problem_hash}, "
                                   f"this problem hashes to {problem_hash(problem)}")
        if len(cert.controller) != len(problem.control.cells):
            raise CertificateError("certificate controller size does not match the control partition")
    return cert


def _write(path, text):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(text)


def cmd_synth(args) -> int:
    problem = _problem(args)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg = SolverConfig(args.solver, timeout=args.timeout)
    strategy = RefinementStrategy(args.strategy)
    budget = Budget(args.max_iters, args.max_cells, args.wallclock)
    verdict, run = synthesize(problem, cfg, strategy, budget, k=args.k, splits_per_cell=args.splits,
                              log_path=out / "run.jsonl", seed=args.seed)
    doc = verdict.to_json()
    if verdict.certificate is not None and verdict.kind == "SAT":
        _write(out / "certificate.json", dumps(verdict.certificate.to_json()))
        doc["certificate"] = str(out / "certificate.json")
    doc["iterations"] = len(run.iterations)
    _write(out / "verdict.json", dumps(doc))
    print(f"{verdict.kind} after {len(run.iterations)} iteration(s)" + (f": {verdict.reason}" if verdict.reason else ""))
    return EXIT[verdict.kind]


def cmd_check(args) -> int:
    problem = _problem(args)
    cert = _certificate(args.certificate, problem)
    rep = check_exact_rules(problem, cert)
    text = json.dumps(rep.to_json(), indent=1, sort_keys=True)
    if args.out:
        _write(args.out, text)
    print(text)
    return 0 if rep.ok else 2


def cmd_encode(args) -> int:
    problem = _problem(args)
    errs = validate(problem)
    if errs:
        raise ProblemError("; ".join(map(str, errs)))
    variant = VARIANT_NAMES[args.variant]
    part = init_partition(problem, args.splits)
    table = build_table(problem.system, part, problem.control)
    enc = encode(problem, part, table, variant, classify(problem, part), args.k)
    if args.out:
        _write(args.out, enc.smtlib_text)
    else:
        sys.stdout.write(enc.smtlib_text)
    print(f"{variant}: {enc.n_assertions} assertions (predicted {enc.predicted_assertions})", file=sys.stderr)
    return 0


def cmd_simulate(args) -> int:
    problem = _problem(args)
    cert = _certificate(args.certificate, problem)
    if args.epsilon is not None:
        rep = probe_robustness(problem, cert, Fraction(args.epsilon), args.samples, args.seed)
    else:
        rep = monte_carlo(problem, cert.controller, args.runs, args.seed, args.horizon)
    text = json.dumps(rep.to_json(), indent=1, sort_keys=True)
    if args.out:
        _write(args.out, text)
    print(text)
    return 0 if rep.ok else 2


def cmd_render(args) -> int:
    problem = _problem(args)
    cert_path = args.certificate
    if cert_path is None and args.run_log:
        for line in Path(args.run_log).read_text().splitlines():
            rec = json.loads(line)
            if "final" in rec and rec["final"].get("certificate"):
                cert_path = rec["final"]["certificate"]
        if cert_path is None:
            verdict = Path(args.run_log).with_name("verdict.json")
            if verdict.exists():
                cert_path = json.loads(verdict.read_text()).get("certificate")
    cert = _certificate(cert_path, problem) if cert_path else None
    spec = RenderSpec(axes=tuple(args.axes), labels=args.labels)
    svg, table = render(problem, cert, spec)
    _write(args.svg, svg)
    _write(args.csv, table)
    print(f"wrote {args.svg} and {args.csv}")
    return 0


def cmd_preset(args) -> int:
    try:
        problem = bench.preset(args.name)
    except KeyError as e:
        raise UsageError(e.args[0]) from None
    text = dumps(problem_to_json(problem))
    if args.out:
        _write(args.out, text)
    else:
        print(text)
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="reach-synth", description="Reach-avoid controller synthesis via SMT.")
    sub = ap.add_subparsers(dest="cmd", required=True)

    def common(p, cert=False):
        p.add_argument("problem", nargs="?", help="problem JSON (reach-synth/1)")
        p.add_argument("--preset", help=f"built-in problem: {', '.join(sorted(bench.PRESETS))}")
        if cert:
            p.add_argument("certificate", help="certificate JSON")
        p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("synth", help="run the refinement loop")
    common(p)
    p.add_argument("--solver", help="SMT solver executable (default: $REACH_SYNTH_SOLVER or z3)")
    p.add_argument("--timeout", type=float, default=300.0, help="per-call solver timeout in seconds")
    p.add_argument("--k", type=int, default=None)
    p.add_argument("--strategy", default="must", choices=["uniform", "must", "complement", "heuristic"])
    p.add_argument("--max-iters", type=int, default=12)
    p.add_argument("--max-cells", type=int, default=20_000)
    p.add_argument("--wallclock", type=float, default=600.0)
    p.add_argument("--splits", type=int, default=2, help="initial bisections per control cell")
    p.add_argument("--out-dir", default=".")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("check", help="check a certificate against the exact rules")
    p.add_argument("problem", help="problem JSON (use '-' with --preset)")
    p.add_argument("certificate")
    p.add_argument("--preset")
    p.add_argument("--out")
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("encode", help="emit the SMT-LIB encoding of the initial partition")
    common(p)
    p.add_argument("--variant", default="weak", choices=["exact", "weak", "strong"])
    p.add_argument("--k", type=int, default=None)
    p.add_argument("--splits", type=int, default=2)
    p.add_argument("--out")
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("simulate", help="closed-loop simulation or perturbation probe")
    p.add_argument("problem", help="problem JSON (use '-' with --preset)")
    p.add_argument("certificate")
    p.add_argument("--preset")
    p.add_argument("--runs", type=int, default=10_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--horizon", type=int, default=None)
    p.add_argument("--epsilon", default=None, help="probe robustness at this sup-norm offset instead")
    p.add_argument("--samples", type=int, default=32)
    p.add_argument("--out")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("render", help="SVG and CSV view of a problem and certificate")
    common(p)
    p.add_argument("--certificate")
    p.add_argument("--run-log")
    p.add_argument("--axes", type=int, nargs=2, default=[0, 1])
    p.add_argument("--labels", default="none", choices=["none", "rank", "input"])
    p.add_argument("--svg", default="render.svg")
    p.add_argument("--csv", default="render.csv")
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("preset", help="write a built-in problem as JSON")
    p.add_argument("name")
    p.add_argument("--out")
    p.set_defaults(func=cmd_preset)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if getattr(args, "problem", None) == "-":
        args.problem = None
    try:
        return args.func(args)
    except (FormatError, CertificateError, ProblemError, EncodingError, SolverConfigError, UsageError,
            ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
