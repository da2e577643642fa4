"""One-step posts of partition cells and their partition-relative over/under approximations.

``over[p][i]`` lists the cells whose closed box meets the exact image of cell ``p`` under
input ``i``; ``under[p][i]`` the cells contained in it. Images that leave the state space
add the pseudo-cell :data:`OUT` to the over set.

Geometric predicates are evaluated in floating point first and only settled exactly
(rational arithmetic) when the float answer is within rounding distance of a tie, so
every decision is the exact one.
"""
from __future__ import annotations

import hashlib
import itertools
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .geometry import (Box, Parallelotope, Partition, affine_image, containing_cell, covered, inverse,
                       matvec, normal_of)
from .model import PiecewiseAffineSystem, lower_control

OUT = -1
_TOL = 1e-9


@dataclass(frozen=True)
class SplitPost:
    """Image of a cell, one piece per location acting on it: ``(location, sub-box, image)``."""

    pieces: tuple

    def images(self) -> list[Parallelotope]:
        return [img for _, _, img in self.pieces]


def exact_post(sys: PiecewiseAffineSystem, cell: Box, input_index: int, exclude=()) -> SplitPost:
    u = sys.inputs[input_index]
    out = []
    for l, sub in sys.pieces(cell, exclude):
        dyn = sys.locations[l].dynamics
        out.append((l, sub, affine_image(sub, dyn.A, dyn.offset(u))))
    return SplitPost(tuple(out))


@dataclass(frozen=True)
class SuccessorTable:
    partition_id: str
    over: tuple
    under: tuple
    cell_location: tuple
    cell_control: tuple

    @property
    def n_cells(self) -> int:
        return len(self.over)

    @property
    def n_inputs(self) -> int:
        return len(self.over[0]) if self.over else 0

    def escapes(self, p: int, i: int) -> bool:
        return OUT in self.over[p][i]

    def to_json(self) -> dict:
        return {"partition_id": self.partition_id,
                "over": [[list(s) for s in row] for row in self.over],
                "under": [[list(s) for s in row] for row in self.under],
                "cell_location": list(self.cell_location),
                "cell_control": list(self.cell_control)}

    @classmethod
    def from_json(cls, d: dict) -> "SuccessorTable":
        rows = lambda key: tuple(tuple(tuple(s) for s in row) for row in d[key])
        return cls(d["partition_id"], rows("over"), rows("under"),
                   tuple(d["cell_location"]), tuple(d["cell_control"]))


class _LocationData:
    def __init__(self, dyn, n):
        self.A = dyn.A
        self.Af = np.array([[float(v) for v in r] for r in dyn.A])
        self.inv = inverse(dyn.A)
        self.invf = None if self.inv is None else np.array([[float(v) for v in r] for r in self.inv])
        axes = [tuple(Fraction(int(i == j)) for i in range(n)) for j in range(n)]
        cols = [tuple(dyn.A[i][j] for i in range(n)) for j in range(n)]
        dirs = axes + [c for c in cols if any(c)]
        normals = set()
        if n == 1:
            normals.add((Fraction(1),))
        else:
            for sub in itertools.combinations(dirs, n - 1):
                nv = normal_of(sub, n)
                if nv is not None:
                    normals.add(nv)
        self.normals = sorted(normals)
        self.normalsf = np.array([[float(v) for v in nv] for nv in self.normals])


class PostEngine:
    """Batch evaluator for over/under successor sets on one partition."""

    def __init__(self, sys: PiecewiseAffineSystem, partition: Partition, control: "Partition | None" = None):
        self.sys = sys
        self.partition = partition
        self.control = control
        self.cells = partition.cells
        self.n = sys.dim
        self.lo = np.array([[float(v) for v in c.lo] for c in self.cells])
        self.hi = np.array([[float(v) for v in c.hi] for c in self.cells])
        self.ctr = (self.lo + self.hi) / 2
        self.hw = (self.hi - self.lo) / 2
        self.locs = [_LocationData(loc.dynamics, self.n) for loc in sys.locations]
        self.offsets = [[loc.dynamics.offset(u) for u in sys.inputs] for loc in sys.locations]
        self._pieces: dict[int, list] = {}

    def pieces(self, p: int):
        hit = self._pieces.get(p)
        if hit is None:
            exclude = lower_control(self.control, self.cells[p]) if self.control is not None else ()
            hit = self._pieces[p] = self.sys.pieces(self.cells[p], exclude)
        return hit

    def location_of(self, p: int) -> int:
        cell = self.cells[p]
        for l, loc in enumerate(self.sys.locations):
            if loc.invariant.contains_box(cell):
                return l
        return -1

    def row(self, p: int, i: int) -> tuple[tuple[int, ...], tuple[int, ...]]:
        over: set[int] = set()
        under: set[int] = set()
        X = self.sys.state_space
        for l, sub in self.pieces(p):
            ld = self.locs[l]
            img = affine_image(sub, ld.A, self.offsets[l][i])
            bb = img.bounding_box()
            if not X.contains_box(bb):
                over.add(OUT)
            over.update(self._meets(ld, img, bb))
            if ld.inv is not None and all(w > 0 for w in sub.widths):
                under.update(self._inside(ld, sub, img, bb, i, l))
        return tuple(sorted(over)), tuple(sorted(under))

    def _meets(self, ld: _LocationData, img: Parallelotope, bb: Box) -> list[int]:
        blo = np.array([float(v) for v in bb.lo]) - _TOL * (1 + np.abs([float(v) for v in bb.lo]))
        bhi = np.array([float(v) for v in bb.hi]) + _TOL * (1 + np.abs([float(v) for v in bb.hi]))
        cand = np.nonzero(np.all((self.lo <= bhi) & (blo <= self.hi), axis=1))[0]
        if len(cand) == 0:
            return []
        cf = np.array([float(v) for v in img.center])
        gf = np.array([[float(v) for v in g] for g in img.generators])  # rows are generators
        N = ld.normalsf
        d = cf[None, :] - self.ctr[cand]                              # K x n
        lhs = np.abs(d @ N.T)                                          # K x N
        box_part = self.hw[cand] @ np.abs(N).T                        # K x N
        gen_part = np.abs(gf @ N.T).sum(axis=0)                        # N
        rhs = box_part + gen_part[None, :]
        scale = 1 + np.abs(d) @ np.abs(N).T + rhs
        slack = rhs - lhs
        sure_in = np.all(slack > _TOL * scale, axis=1)
        sure_out = np.any(slack < -_TOL * scale, axis=1)
        out = []
        for k, p in enumerate(cand):
            p = int(p)
            if sure_in[k]:
                out.append(p)
            elif not sure_out[k] and self._meets_exact(ld, img, self.cells[p]):
                out.append(p)
        return out

    @staticmethod
    def _meets_exact(ld, img, cell) -> bool:
        d = [a - b for a, b in zip(img.center, cell.center)]
        hw = cell.half_widths
        for nv in ld.normals:
            lhs = abs(sum(a * b for a, b in zip(nv, d)))
            rhs = sum(abs(a) * w for a, w in zip(nv, hw)) + \
                sum(abs(sum(a * b for a, b in zip(nv, g))) for g in img.generators)
            if lhs > rhs:
                return False
        return True

    def _inside(self, ld, sub: Box, img: Parallelotope, bb: Box, i: int, l: int) -> list[int]:
        blo = np.array([float(v) for v in bb.lo])
        bhi = np.array([float(v) for v in bb.hi])
        slack_bb = _TOL * (1 + np.abs(blo) + np.abs(bhi))
        cand = np.nonzero(np.all((self.lo >= blo - slack_bb) & (self.hi <= bhi + slack_bb), axis=1))[0]
        if len(cand) == 0:
            return []
        # x in image  <=>  |A^-1 (x - offset) - c_sub|_j <= hw_sub_j  for all j
        off = self.offsets[l][i]
        offf = np.array([float(v) for v in off])
        csub = np.array([float(v) for v in sub.center])
        hsub = np.array([float(v) for v in sub.half_widths])
        out = []
        corners = np.array(list(itertools.product((0, 1), repeat=self.n)), dtype=float)
        for p in cand:
            p = int(p)
            verts = self.lo[p] + corners * (self.hi[p] - self.lo[p])       # V x n
            z = (verts - offf) @ ld.invf.T - csub
            margin = hsub - np.abs(z)
            scale = 1 + np.abs(verts) @ np.abs(ld.invf).T + np.abs(csub) + hsub
            if np.all(margin > _TOL * scale):
                out.append(p)
            elif np.any(margin < -_TOL * scale):
                continue
            elif self._inside_exact(ld, sub, off, self.cells[p]):
                out.append(p)
        return out

    @staticmethod
    def _inside_exact(ld, sub, off, cell) -> bool:
        cs, hs = sub.center, sub.half_widths
        for v in cell.vertices():
            z = matvec(ld.inv, [a - b for a, b in zip(v, off)])
            if any(abs(zj - cj) > hj for zj, cj, hj in zip(z, cs, hs)):
                return False
        return True


def over_post(sys, partition: Partition, cell_id: int, input_index: int) -> frozenset:
    return frozenset(PostEngine(sys, partition).row(cell_id, input_index)[0])


def under_post(sys, partition: Partition, cell_id: int, input_index: int) -> frozenset:
    return frozenset(PostEngine(sys, partition).row(cell_id, input_index)[1])


def box_post(sys, partition: Partition, source: Box, input_index: int) -> tuple[frozenset, frozenset]:
    """(over, under) cells of ``partition`` for the image of an arbitrary box."""
    engine = PostEngine(sys, Partition((source,) + tuple(partition.cells), partition.domain))
    over, under = engine.row(0, input_index)
    shift = lambda ids: frozenset(OUT if q == OUT else q - 1 for q in ids if q != 0)
    return shift(over), shift(under)


def build_table(sys: PiecewiseAffineSystem, partition: Partition, control: "Partition | None" = None,
                previous: "tuple[SuccessorTable, Iterable[int]] | None" = None,
                workers: int = 1) -> SuccessorTable:
    """Over/under successor sets for every (cell, input) pair.

    ``previous=(table, split_ids)`` reuses rows of a table built on the partition that
    ``partition`` was refined from: a row is kept when the cell was not split and none
    of its over-successors were (its image then misses every new cell boundary).
    """
    engine = PostEngine(sys, partition, control)
    n_cells, n_in = len(partition), sys.n_inputs
    reuse: dict[int, tuple] = {}
    if previous is not None:
        old, split_ids = previous
        split_ids = set(split_ids)
        for p in range(min(old.n_cells, n_cells)):
            if p in split_ids:
                continue
            if all(not split_ids.intersection(old.over[p][i]) for i in range(n_in)):
                reuse[p] = (old.over[p], old.under[p])

    def compute(p):
        if p in reuse:
            return reuse[p]
        rows = [engine.row(p, i) for i in range(n_in)]
        return tuple(r[0] for r in rows), tuple(r[1] for r in rows)

    if workers > 1:
        with ThreadPoolExecutor(workers) as ex:
            results = list(ex.map(compute, range(n_cells)))
    else:
        results = [compute(p) for p in range(n_cells)]
    if control is not None:
        ctl = tuple(_control_index(control, c) for c in partition.cells)
    else:
        ctl = tuple(-1 for _ in range(n_cells))
    return SuccessorTable(
        partition.digest(),
        tuple(r[0] for r in results),
        tuple(r[1] for r in results),
        tuple(engine.location_of(p) for p in range(n_cells)),
        ctl,
    )


def _control_index(control: Partition, cell: Box) -> int:
    j = containing_cell(control.cells, cell)
    if j is None:
        raise ValueError(f"cell {cell} is not inside any control cell")
    return j


# --------------------------------------------------------------------------- compositions


def cell_choices(table: SuccessorTable, controller) -> tuple[int, ...]:
    """Lift a control-cell lookup table to one input per partition cell."""
    return tuple(controller[c] for c in table.cell_control)


def _k_step(rows, choice, cell, k, goal):
    cur = {cell}
    for _ in range(k):
        nxt = set()
        for q in cur:
            if q == OUT or q in goal:
                nxt.add(q)
            else:
                nxt.update(rows[q][choice[q]])
        cur = nxt
    return frozenset(cur)


def k_step_over(table: SuccessorTable, choice: Sequence[int], cell_id: int, k: int,
                goal: Iterable[int] = ()) -> frozenset:
    """Cells reachable in exactly ``k`` over-approximate steps; goal cells absorb."""
    if k < 1:
        raise ValueError("k must be >= 1")
    return _k_step(table.over, choice, cell_id, k, frozenset(goal))


def k_step_under(table: SuccessorTable, choice: Sequence[int], cell_id: int, k: int,
                 goal: Iterable[int] = ()) -> frozenset:
    if k < 1:
        raise ValueError("k must be >= 1")
    return _k_step(table.under, choice, cell_id, k, frozenset(goal))


def fixed_point(rows, choice: Sequence[int], seeds: Iterable[int]) -> frozenset:
    """Least set containing ``seeds`` closed under ``rows[p][choice[p]]`` (OUT is a sink)."""
    seen = set(seeds)
    stack = list(seen)
    while stack:
        p = stack.pop()
        if p == OUT:
            continue
        for q in rows[p][choice[p]]:
            if q not in seen:
                seen.add(q)
                stack.append(q)
    return frozenset(seen)


# --------------------------------------------------------------------------- alignment and caching


def exactly_aligned(sys: PiecewiseAffineSystem, partition: Partition, table: SuccessorTable,
                    control: "Partition | None" = None) -> bool:
    """True iff every image that stays in the domain is exactly a union of partition cells.

    Then the under sets are the exact cell cover of each post and the basic rules can be
    encoded without approximation.
    """
    X = sys.state_space
    exclude = [lower_control(control, c) if control is not None else () for c in partition.cells]
    for p, cell in enumerate(partition.cells):
        for i in range(table.n_inputs):
            inside = [partition.cells[q] for q in table.under[p][i]]
            imgs = exact_post(sys, cell, i, exclude[p]).images()
            if not all(X.contains_box(img.bounding_box()) for img in imgs):
                # escaping inputs are forbidden for members in every rule system
                continue
            for img in imgs:
                if not img.is_box() or not covered(img.bounding_box(), inside):
                    return False
    return True


def table_key(sys: PiecewiseAffineSystem, partition: Partition, control: "Partition | None" = None) -> str:
    from .serial import system_to_json

    payload = json.dumps({"system": system_to_json(sys), "partition": partition.digest(),
                          "control": control.digest() if control is not None else None}, sort_keys=True)
    return hashlib.sha256(payload.encode()).hexdigest()[:24]


def cached_table(sys, partition, control, cache_dir: "str | Path | None") -> SuccessorTable:
    """``build_table`` behind a JSON file cache keyed by system and partition."""
    if cache_dir is None:
        return build_table(sys, partition, control)
    path = Path(cache_dir) / f"table-{table_key(sys, partition, control)}.json"
    if path.exists():
        return SuccessorTable.from_json(json.loads(path.read_text()))
    table = build_table(sys, partition, control)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(table.to_json(), separators=(",", ":")))
    return table
