"""Piecewise-affine systems, reach-avoid problems, controllers and ranking functions."""
from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property
from typing import Sequence

from .geometry import (Box, Partition, as_matrix, as_vector, containing_cell, covered, matvec,
                       overlapping_pairs, preserves)


class OutOfDomain(ValueError):
    """A state outside the state space was fed to the dynamics."""


@dataclass(frozen=True)
class AffineDynamics:
    """``f(x, u) = A x + B u + c``."""

    A: tuple
    B: tuple
    c: tuple

    def __post_init__(self):
        object.__setattr__(self, "A", as_matrix(self.A))
        object.__setattr__(self, "B", as_matrix(self.B))
        object.__setattr__(self, "c", as_vector(self.c))

    def offset(self, u) -> tuple[Fraction, ...]:
        return tuple(a + b for a, b in zip(matvec(self.B, u), self.c))

    def apply(self, x, u) -> tuple[Fraction, ...]:
        return tuple(a + b for a, b in zip(matvec(self.A, x), self.offset(u)))

    def shifted(self, delta) -> "AffineDynamics":
        return AffineDynamics(self.A, self.B, tuple(a + d for a, d in zip(self.c, as_vector(delta))))


@dataclass(frozen=True)
class Location:
    invariant: Box
    dynamics: AffineDynamics


@dataclass(frozen=True)
class PiecewiseAffineSystem:
    state_space: Box
    input_space: Box
    inputs: tuple
    locations: tuple

    def __post_init__(self):
        object.__setattr__(self, "inputs", tuple(as_vector(u) for u in self.inputs))
        object.__setattr__(self, "locations", tuple(self.locations))

    @property
    def dim(self) -> int:
        return self.state_space.dim

    @property
    def n_inputs(self) -> int:
        return len(self.inputs)

    def locate(self, x) -> int:
        """Lowest-indexed location whose closed invariant holds ``x``."""
        if not self.state_space.contains_point(x):
            raise OutOfDomain(f"state {tuple(map(str, x))} outside the state space")
        for i, loc in enumerate(self.locations):
            if loc.invariant.contains_point(x):
                return i
        raise OutOfDomain(f"no location contains {tuple(map(str, x))}")

    def step(self, x, input_index: int) -> tuple[Fraction, ...]:
        x = as_vector(x)
        loc = self.locations[self.locate(x)]
        return loc.dynamics.apply(x, self.inputs[input_index])

    def pieces(self, cell: Box, exclude: Sequence[Box] = ()) -> list[tuple[int, Box]]:
        """Split ``cell`` by the locations whose dynamics act on some of its points.

        A location contributes the closed sub-box ``cell ∩ invariant`` unless every point
        of it is owned by a lower-indexed location (boundary tie-break) or lies in
        ``exclude`` (points governed by another control cell).
        """
        out = []
        for l, loc in enumerate(self.locations):
            sub = cell.intersection(loc.invariant)
            if sub is None:
                continue
            lower = [self.locations[j].invariant for j in range(l)]
            if lower and covered(sub, lower):
                continue
            if exclude and covered(sub, exclude):
                continue
            out.append((l, sub))
        return out

    def perturbed(self, offsets: Sequence) -> "PiecewiseAffineSystem":
        """Same system with a constant offset added to each location's dynamics."""
        locs = tuple(Location(loc.invariant, loc.dynamics.shifted(d)) for loc, d in zip(self.locations, offsets))
        return PiecewiseAffineSystem(self.state_space, self.input_space, self.inputs, locs)


def locate(sys: PiecewiseAffineSystem, x) -> int:
    return sys.locate(as_vector(x))


def step(sys: PiecewiseAffineSystem, x, input_index: int) -> tuple[Fraction, ...]:
    return sys.step(x, input_index)


@dataclass(frozen=True)
class Controller:
    """Lookup table: control cell id -> input index."""

    table: tuple[int, ...]

    def __getitem__(self, cid: int) -> int:
        return self.table[cid]

    def __len__(self):
        return len(self.table)


@dataclass(frozen=True)
class RankingFunction:
    ranks: tuple[int, ...]
    max_rank: int

    def __getitem__(self, cid: int) -> int:
        return self.ranks[cid]


@dataclass(frozen=True)
class Problem:
    system: PiecewiseAffineSystem
    control: Partition
    init: tuple
    safe: tuple
    goal: tuple
    k: int = 1
    max_rank: "int | None" = None
    name: str = ""

    def __post_init__(self):
        for f in ("init", "safe", "goal"):
            object.__setattr__(self, f, tuple(getattr(self, f)))

    @property
    def rank_bound(self) -> int:
        """Largest admissible rank; defaults to the number of control cells."""
        return self.max_rank if self.max_rank is not None else len(self.control.cells)

    @cached_property
    def goal_controls(self) -> frozenset:
        return frozenset(i for i, c in enumerate(self.control.cells) if covered(c, self.goal))

    def control_of(self, x) -> int:
        """Lowest-indexed control cell containing ``x``."""
        i = self.control.locate(x)
        if i is None:
            raise OutOfDomain(f"state {tuple(map(str, x))} outside the control partition")
        return i

    def in_safe(self, x) -> bool:
        return any(b.contains_point(x) for b in self.safe)

    def in_goal(self, x) -> bool:
        return any(b.contains_point(x) for b in self.goal)

    def in_init(self, x) -> bool:
        return any(b.contains_point(x) for b in self.init)


@dataclass(frozen=True)
class CellClasses:
    """Membership of partition cells in Init / Safe / Goal, plus the control cell of each."""

    control_of: tuple[int, ...]
    init: frozenset
    safe: frozenset
    goal: frozenset


def lower_control(control: Partition, cell: Box, owner: "int | None" = None) -> list[Box]:
    """Control cells with a smaller index than ``cell``'s own that touch it.

    Points of ``cell`` inside them are steered by those cells (lowest index wins).
    """
    if owner is None:
        owner = containing_cell(control.cells, cell)
        if owner is None:
            raise ValueError(f"cell {cell} is not inside a control cell")
    return [c for c in control.cells[:owner] if c.intersects_box(cell)]


def classify(problem: Problem, partition: Partition, parent_classes: "CellClasses | None" = None) -> CellClasses:
    """Assign every partition cell to its control cell and to the reach-avoid sets.

    ``parent_classes`` (for the partition ``partition`` was refined from) lets split
    cells inherit their labels, which is exact because the parent was aligned.
    """
    if parent_classes is not None and partition.parent is not None:
        par = partition.parent
        return CellClasses(
            tuple(parent_classes.control_of[par[i]] for i in range(len(partition))),
            frozenset(i for i in range(len(partition)) if par[i] in parent_classes.init),
            frozenset(i for i in range(len(partition)) if par[i] in parent_classes.safe),
            frozenset(i for i in range(len(partition)) if par[i] in parent_classes.goal),
        )
    ctl = []
    for i, cell in enumerate(partition.cells):
        owner = containing_cell(problem.control.cells, cell)
        if owner is None:
            raise ValueError(f"partition cell {i} is not inside a control cell")
        ctl.append(owner)
    goal_c = problem.goal_controls
    return CellClasses(
        tuple(ctl),
        frozenset(i for i, c in enumerate(partition.cells) if covered(c, problem.init)),
        frozenset(i for i, c in enumerate(partition.cells) if covered(c, problem.safe)),
        frozenset(i for i in range(len(partition)) if ctl[i] in goal_c),
    )


@dataclass(frozen=True)
class Violation:
    code: str
    message: str
    ids: tuple = field(default=())

    def __str__(self):
        return f"{self.code}: {self.message}"


def validate(problem: Problem) -> list[Violation]:
    """All broken well-formedness conditions of ``problem`` (empty when valid)."""
    out: list[Violation] = []
    sys = problem.system
    X = sys.state_space
    n = X.dim
    if sys.input_space.dim < 1:
        out.append(Violation("inputs", "input space has no dimension"))
    if not sys.inputs:
        out.append(Violation("inputs", "no input points listed"))
    for i, u in enumerate(sys.inputs):
        if len(u) != sys.input_space.dim or not sys.input_space.contains_point(u):
            out.append(Violation("inputs", f"input {i} outside the input box", (i,)))
    m = sys.input_space.dim
    for l, loc in enumerate(sys.locations):
        d = loc.dynamics
        if loc.invariant.dim != n:
            out.append(Violation("dynamics", f"location {l} invariant has wrong dimension", (l,)))
        if len(d.A) != n or any(len(r) != n for r in d.A) or len(d.c) != n \
                or len(d.B) != n or any(len(r) != m for r in d.B):
            out.append(Violation("dynamics", f"location {l} dynamics have inconsistent shapes", (l,)))
    if out:
        return out
    if not sys.locations:
        return [Violation("locations", "system has no locations")]
    loc_part = Partition(tuple(loc.invariant for loc in sys.locations), X)
    for msg in loc_part.problems():
        out.append(Violation("locations", "location invariants do not partition X: " + msg))
    for msg in problem.control.problems():
        out.append(Violation("control", "control cells do not partition X: " + msg))
    if problem.control.domain != X:
        out.append(Violation("control", "control partition domain differs from X"))
    if out:
        return out
    for name in ("init", "safe", "goal"):
        for j, b in enumerate(getattr(problem, name)):
            if b.dim != n or not X.contains_box(b):
                out.append(Violation(name, f"{name} box {j} is not inside X", (j,)))
    if out:
        return out
    if not all(covered(b, problem.safe) for b in problem.init):
        out.append(Violation("init-safe", "init is not inside safe"))
    if not all(covered(b, problem.safe) for b in problem.goal):
        out.append(Violation("goal-safe", "goal is not inside safe"))
    for name in ("init", "safe", "goal"):
        boxes = getattr(problem, name)
        for cid, cell in enumerate(problem.control.cells):
            if not covered(cell, boxes) and any(cell.interior_intersects(b) for b in boxes):
                out.append(Violation(f"{name}-aligned", f"control cell {cid} straddles the {name} boundary", (cid,)))
    for l, loc in enumerate(sys.locations):
        if not preserves(problem.control, [loc.invariant]):
            cids = tuple(i for i, c in enumerate(problem.control.cells)
                         if c.interior_intersects(loc.invariant) and not loc.invariant.contains_box(c))
            out.append(Violation("location-aligned", f"control cells {cids} straddle location {l}", cids))
    if problem.k < 1:
        out.append(Violation("k", "induction parameter k must be >= 1"))
    if problem.max_rank is not None and problem.max_rank < 0:
        out.append(Violation("max_rank", "max_rank must be non-negative"))
    return out


def check_partition_alignment(problem: Problem, partition: Partition) -> list[str]:
    """Reasons ``partition`` cannot serve as a refinement of the control partition."""
    out = list(partition.problems())
    if out:
        return out
    for i, cell in enumerate(partition.cells):
        if not any(c.contains_box(cell) for c in problem.control.cells):
            out.append(f"partition cell {i} is not inside a control cell")
    return out


__all__ = [
    "AffineDynamics", "Location", "PiecewiseAffineSystem", "Controller", "RankingFunction", "Problem",
    "CellClasses", "classify", "Violation", "validate", "locate", "step", "OutOfDomain", "overlapping_pairs",
    "check_partition_alignment", "lower_control",
]
