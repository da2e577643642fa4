"""JSON forms of problems (format ``reach-synth/1``). Rationals travel as ``"p/q"`` strings."""
from __future__ import annotations

import json
from pathlib import Path

from .geometry import Box, Partition, as_matrix, as_vector, fmt_scalar
from .model import AffineDynamics, Location, PiecewiseAffineSystem, Problem

FORMAT = "reach-synth/1"


class FormatError(ValueError):
    """Malformed problem or certificate document; the message names the offending field."""


def _vec(v):
    return [fmt_scalar(x) for x in v]


def system_to_json(sys: PiecewiseAffineSystem) -> dict:
    return {
        "state_space": sys.state_space.to_json(),
        "input_space": sys.input_space.to_json(),
        "inputs": [_vec(u) for u in sys.inputs],
        "locations": [{
            "invariant": loc.invariant.to_json(),
            "A": [_vec(r) for r in loc.dynamics.A],
            "B": [_vec(r) for r in loc.dynamics.B],
            "c": _vec(loc.dynamics.c),
        } for loc in sys.locations],
    }


def problem_to_json(problem: Problem) -> dict:
    return {
        "format": FORMAT,
        "name": problem.name,
        "system": system_to_json(problem.system),
        "control": [c.to_json() for c in problem.control.cells],
        "init": [b.to_json() for b in problem.init],
        "safe": [b.to_json() for b in problem.safe],
        "goal": [b.to_json() for b in problem.goal],
        "k": problem.k,
        "max_rank": problem.max_rank,
    }


def _field(d, key, where):
    if not isinstance(d, dict) or key not in d:
        raise FormatError(f"missing field '{where}{key}'")
    return d[key]


def _box(d, where) -> Box:
    try:
        return Box(as_vector(_field(d, "lo", where + ".")), as_vector(_field(d, "hi", where + ".")))
    except FormatError:
        raise
    except (TypeError, ValueError, ZeroDivisionError) as e:
        raise FormatError(f"field '{where}': {e}") from None


def _boxes(d, key) -> tuple:
    items = _field(d, key, "")
    if not isinstance(items, list):
        raise FormatError(f"field '{key}' must be a list of boxes")
    return tuple(_box(b, f"{key}[{i}]") for i, b in enumerate(items))


def system_from_json(d: dict) -> PiecewiseAffineSystem:
    locs = []
    for l, ld in enumerate(_field(d, "locations", "system.")):
        where = f"system.locations[{l}]"
        try:
            dyn = AffineDynamics(as_matrix(_field(ld, "A", where + ".")), as_matrix(_field(ld, "B", where + ".")),
                                 as_vector(_field(ld, "c", where + ".")))
        except FormatError:
            raise
        except (TypeError, ValueError, ZeroDivisionError) as e:
            raise FormatError(f"field '{where}': {e}") from None
        locs.append(Location(_box(_field(ld, "invariant", where + "."), where + ".invariant"), dyn))
    try:
        inputs = tuple(as_vector(u) for u in _field(d, "inputs", "system."))
    except (TypeError, ValueError, ZeroDivisionError) as e:
        raise FormatError(f"field 'system.inputs': {e}") from None
    return PiecewiseAffineSystem(
        _box(_field(d, "state_space", "system."), "system.state_space"),
        _box(_field(d, "input_space", "system."), "system.input_space"),
        inputs, tuple(locs))


def problem_from_json(d: dict) -> Problem:
    if not isinstance(d, dict):
        raise FormatError("problem document must be a JSON object")
    fmt = d.get("format")
    if fmt != FORMAT:
        raise FormatError(f"field 'format' must be '{FORMAT}', got {fmt!r}")
    sys = system_from_json(_field(d, "system", ""))
    control = Partition(_boxes(d, "control"), sys.state_space)
    k = d.get("k", 1)
    max_rank = d.get("max_rank")
    if not isinstance(k, int) or isinstance(k, bool):
        raise FormatError("field 'k' must be an integer")
    if max_rank is not None and (not isinstance(max_rank, int) or isinstance(max_rank, bool)):
        raise FormatError("field 'max_rank' must be an integer or null")
    return Problem(sys, control, _boxes(d, "init"), _boxes(d, "safe"), _boxes(d, "goal"),
                   k=k, max_rank=max_rank, name=d.get("name", ""))


def dumps(obj: dict) -> str:
    return json.dumps(obj, indent=1, sort_keys=True)


def load_problem(path) -> Problem:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as e:
        raise FormatError(f"invalid JSON: {e}") from None
    return problem_from_json(doc)


def save_problem(problem: Problem, path) -> None:
    Path(path).write_text(dumps(problem_to_json(problem)))


def partition_from_json(d: dict) -> Partition:
    try:
        return Partition.from_json(d)
    except (KeyError, TypeError, ValueError) as e:
        raise FormatError(f"field 'partition': {e}") from None
