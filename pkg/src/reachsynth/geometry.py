"""Exact rational geometry: boxes, parallelotopes and partitions.

Every coordinate is a :class:`fractions.Fraction`. Sets are closed; two cells of
a partition may share a face but never interior points.
"""
from __future__ import annotations

import hashlib
import itertools
import json
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Sequence

Scalar = Fraction


class GeometryError(ValueError):
    pass


def as_scalar(v) -> Fraction:
    if isinstance(v, Fraction):
        return v
    if isinstance(v, bool):
        raise TypeError("bool is not a scalar")
    if isinstance(v, (int, float, str)):
        return Fraction(v)
    raise TypeError(f"cannot convert {v!r} to an exact rational")


def as_vector(vs) -> tuple[Fraction, ...]:
    return tuple(as_scalar(v) for v in vs)


def as_matrix(rows) -> tuple[tuple[Fraction, ...], ...]:
    return tuple(as_vector(r) for r in rows)


def fmt_scalar(v: Fraction) -> str:
    v = as_scalar(v)
    return str(v.numerator) if v.denominator == 1 else f"{v.numerator}/{v.denominator}"


@dataclass(frozen=True)
class Box:
    """Closed hyperrectangle ``prod [lo[i], hi[i]]``."""

    lo: tuple[Fraction, ...]
    hi: tuple[Fraction, ...]

    def __post_init__(self):
        lo, hi = as_vector(self.lo), as_vector(self.hi)
        if not lo or len(lo) != len(hi):
            raise GeometryError(f"bad box bounds lo={lo} hi={hi}")
        if any(a > b for a, b in zip(lo, hi)):
            raise GeometryError(f"box has lo > hi: {lo} {hi}")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @classmethod
    def from_bounds(cls, *bounds) -> "Box":
        return cls(tuple(b[0] for b in bounds), tuple(b[1] for b in bounds))

    @property
    def dim(self) -> int:
        return len(self.lo)

    @property
    def widths(self) -> tuple[Fraction, ...]:
        return tuple(h - l for l, h in zip(self.lo, self.hi))

    @property
    def center(self) -> tuple[Fraction, ...]:
        return tuple((l + h) / 2 for l, h in zip(self.lo, self.hi))

    @property
    def half_widths(self) -> tuple[Fraction, ...]:
        return tuple((h - l) / 2 for l, h in zip(self.lo, self.hi))

    def diameter(self) -> Fraction:
        """Infinity-norm diameter, i.e. the widest side."""
        return max(self.widths)

    def volume(self) -> Fraction:
        v = Fraction(1)
        for w in self.widths:
            v *= w
        return v

    def widest_axis(self) -> int:
        ws = self.widths
        return ws.index(max(ws))

    def vertices(self) -> list[tuple[Fraction, ...]]:
        return [tuple(c) for c in itertools.product(*zip(self.lo, self.hi))]

    def contains_point(self, x: Sequence) -> bool:
        return all(l <= v <= h for l, v, h in zip(self.lo, x, self.hi))

    def contains_box(self, other: "Box") -> bool:
        _same_dim(self, other)
        return all(a <= c and d <= b for a, b, c, d in zip(self.lo, self.hi, other.lo, other.hi))

    def intersects_box(self, other: "Box") -> bool:
        _same_dim(self, other)
        return all(a <= d and c <= b for a, b, c, d in zip(self.lo, self.hi, other.lo, other.hi))

    def interior_intersects(self, other: "Box") -> bool:
        """True iff the intersection has positive volume."""
        _same_dim(self, other)
        return all(a < d and c < b for a, b, c, d in zip(self.lo, self.hi, other.lo, other.hi))

    def intersection(self, other: "Box") -> "Box | None":
        if not self.intersects_box(other):
            return None
        return Box(tuple(map(max, self.lo, other.lo)), tuple(map(min, self.hi, other.hi)))

    def split(self, axis: int) -> tuple["Box", "Box"]:
        if not 0 <= axis < self.dim:
            raise GeometryError(f"axis {axis} out of range for dimension {self.dim}")
        if self.lo[axis] == self.hi[axis]:
            raise GeometryError(f"cannot split degenerate axis {axis}")
        mid = (self.lo[axis] + self.hi[axis]) / 2
        hi1 = self.hi[:axis] + (mid,) + self.hi[axis + 1:]
        lo2 = self.lo[:axis] + (mid,) + self.lo[axis + 1:]
        return Box(self.lo, hi1), Box(lo2, self.hi)

    def to_json(self) -> dict:
        return {"lo": [fmt_scalar(v) for v in self.lo], "hi": [fmt_scalar(v) for v in self.hi]}

    @classmethod
    def from_json(cls, d: dict) -> "Box":
        return cls(as_vector(d["lo"]), as_vector(d["hi"]))

    def __repr__(self):
        return "Box(" + " x ".join(f"[{fmt_scalar(l)},{fmt_scalar(h)}]" for l, h in zip(self.lo, self.hi)) + ")"


def _same_dim(a, b):
    if a.dim != b.dim:
        raise GeometryError(f"dimension mismatch: {a.dim} vs {b.dim}")


@dataclass(frozen=True)
class Parallelotope:
    """The set ``{center + G a : a in [-1, 1]^n}``; ``generators`` holds the columns of G."""

    center: tuple[Fraction, ...]
    generators: tuple[tuple[Fraction, ...], ...]

    @property
    def dim(self) -> int:
        return len(self.center)

    def bounding_box(self) -> Box:
        rad = [sum(abs(g[i]) for g in self.generators) for i in range(self.dim)]
        return Box(tuple(c - r for c, r in zip(self.center, rad)),
                   tuple(c + r for c, r in zip(self.center, rad)))

    def vertices(self) -> list[tuple[Fraction, ...]]:
        out = []
        for signs in itertools.product((-1, 1), repeat=len(self.generators)):
            out.append(tuple(self.center[i] + sum(s * g[i] for s, g in zip(signs, self.generators))
                             for i in range(self.dim)))
        return out

    def volume(self) -> Fraction:
        cols = [list(g) for g in self.generators]
        return abs(det([[cols[j][i] for j in range(len(cols))] for i in range(self.dim)])) * 2 ** self.dim

    def contains_point(self, x: Sequence) -> bool:
        return _point_in(self, tuple(as_vector(x)))

    def is_box(self) -> bool:
        """True iff every generator is parallel to a coordinate axis."""
        return all(sum(1 for v in g if v != 0) <= 1 for g in self.generators)


# --------------------------------------------------------------------------- linear algebra


def matvec(A, x) -> tuple[Fraction, ...]:
    return tuple(sum((a * v for a, v in zip(row, x)), Fraction(0)) for row in A)


def det(M) -> Fraction:
    """Exact determinant by fraction-preserving Gaussian elimination."""
    m = [list(map(Fraction, r)) for r in M]
    n = len(m)
    sign = 1
    d = Fraction(1)
    for c in range(n):
        piv = next((r for r in range(c, n) if m[r][c] != 0), None)
        if piv is None:
            return Fraction(0)
        if piv != c:
            m[c], m[piv] = m[piv], m[c]
            sign = -sign
        d *= m[c][c]
        for r in range(c + 1, n):
            f = m[r][c] / m[c][c]
            if f:
                for k in range(c, n):
                    m[r][k] -= f * m[c][k]
    return sign * d


def inverse(M) -> "tuple[tuple[Fraction, ...], ...] | None":
    """Exact inverse, or None when M is singular."""
    n = len(M)
    aug = [list(map(Fraction, r)) + [Fraction(int(i == j)) for j in range(n)] for i, r in enumerate(M)]
    for c in range(n):
        piv = next((r for r in range(c, n) if aug[r][c] != 0), None)
        if piv is None:
            return None
        aug[c], aug[piv] = aug[piv], aug[c]
        p = aug[c][c]
        aug[c] = [v / p for v in aug[c]]
        for r in range(n):
            if r != c and aug[r][c] != 0:
                f = aug[r][c]
                aug[r] = [a - f * b for a, b in zip(aug[r], aug[c])]
    return tuple(tuple(r[n:]) for r in aug)


def normal_of(vectors: Sequence[Sequence[Fraction]], n: int) -> "tuple[Fraction, ...] | None":
    """Vector orthogonal to n-1 vectors in R^n (generalized cross product), None if they are dependent."""
    comps = []
    for i in range(n):
        minor = [[v[j] for j in range(n) if j != i] for v in vectors]
        comps.append((-1) ** i * det(minor) if minor else Fraction(1))
    if all(c == 0 for c in comps):
        return None
    return canonical_direction(comps)


def canonical_direction(v) -> tuple[Fraction, ...]:
    """Scale so the first nonzero component is +1; used to deduplicate normals."""
    lead = next(c for c in v if c != 0)
    return tuple(Fraction(c) / lead for c in v)


def fm_feasible(rows: list[tuple[Sequence[Fraction], Fraction]]) -> bool:
    """Decide ``exists x. a.x <= b for all (a, b) in rows`` by Fourier-Motzkin elimination."""
    if not rows:
        return True
    n = len(rows[0][0])
    cur = [(tuple(map(Fraction, a)), Fraction(b)) for a, b in rows]
    for var in range(n):
        pos, neg, nxt = [], [], set()
        for a, b in cur:
            if a[var] > 0:
                pos.append((a, b))
            elif a[var] < 0:
                neg.append((a, b))
            else:
                nxt.add(_norm_row(a, b))
        for ap, bp in pos:
            for an, bn in neg:
                lp, ln = ap[var], -an[var]
                a = tuple(x * ln + y * lp for x, y in zip(ap, an))
                nxt.add(_norm_row(a, bp * ln + bn * lp))
        cur = list(nxt)
        if any(all(x == 0 for x in a) and b < 0 for a, b in cur):
            return False
    return all(b >= 0 for _, b in cur)


def _norm_row(a, b):
    scale = max((abs(x) for x in a), default=0)
    if scale == 0:
        return (a, Fraction(-1) if b < 0 else Fraction(0))
    return tuple(x / scale for x in a), b / scale


# --------------------------------------------------------------------------- operations


def affine_image(b: Box, A, offset) -> Parallelotope:
    """Exact image ``{A x + offset : x in b}``."""
    A = as_matrix(A)
    offset = as_vector(offset)
    n = b.dim
    if len(A) != n or any(len(r) != n for r in A) or len(offset) != n:
        raise GeometryError(f"affine map shape does not match box dimension {n}")
    c = tuple(v + o for v, o in zip(matvec(A, b.center), offset))
    hw = b.half_widths
    gens = tuple(tuple(A[i][j] * hw[j] for i in range(n)) for j in range(n))
    return Parallelotope(c, gens)


def _zonotope_has(point, gens, n) -> "bool | None":
    """Membership of ``point`` in the origin-centred zonotope spanned by ``gens``.

    Returns None if the generators do not span R^n (facet test not applicable).
    """
    gens = [g for g in gens if any(v != 0 for v in g)]
    normals = set()
    for sub in itertools.combinations(gens, n - 1):
        nv = normal_of(sub, n) if n > 1 else (Fraction(1),)
        if nv is not None:
            normals.add(nv)
    if not normals:
        return None
    for nv in normals:
        lhs = abs(sum(a * b for a, b in zip(nv, point)))
        rhs = sum(abs(sum(a * b for a, b in zip(nv, g))) for g in gens)
        if lhs > rhs:
            return False
    return True


def intersects(p: Parallelotope, b: Box) -> bool:
    """Closed-set intersection test, decided exactly."""
    _same_dim(p, b)
    n = p.dim
    if not p.bounding_box().intersects_box(b):
        return False
    gens = [tuple(hw if i == j else Fraction(0) for i in range(n)) for j, hw in enumerate(b.half_widths)]
    gens += list(p.generators)
    d = tuple(x - y for x, y in zip(p.center, b.center))
    if _spans(gens, n):
        res = _zonotope_has(d, gens, n)
        if res is not None:
            return res
    # degenerate: exists a in [-1,1]^n with lo <= c + G a <= hi
    rows = []
    for i in range(n):
        gi = [g[i] for g in p.generators]
        rows.append((gi, b.hi[i] - p.center[i]))
        rows.append(([-v for v in gi], p.center[i] - b.lo[i]))
    for j in range(len(p.generators)):
        e = [Fraction(int(j == k)) for k in range(len(p.generators))]
        rows.append((e, Fraction(1)))
        rows.append(([-v for v in e], Fraction(1)))
    return fm_feasible(rows)


def _spans(gens, n) -> bool:
    rows = [list(g) for g in gens if any(v != 0 for v in g)]
    return _rank(rows) == n


def _rank(rows) -> int:
    m = [list(map(Fraction, r)) for r in rows]
    rank = 0
    ncols = len(m[0]) if m else 0
    for c in range(ncols):
        piv = next((r for r in range(rank, len(m)) if m[r][c] != 0), None)
        if piv is None:
            continue
        m[rank], m[piv] = m[piv], m[rank]
        for r in range(len(m)):
            if r != rank and m[r][c] != 0:
                f = m[r][c] / m[rank][c]
                m[r] = [a - f * b for a, b in zip(m[r], m[rank])]
        rank += 1
    return rank


def _point_in(p: Parallelotope, x) -> bool:
    n = p.dim
    G = [[p.generators[j][i] for j in range(len(p.generators))] for i in range(n)]
    d = [a - c for a, c in zip(x, p.center)]
    inv = inverse(G) if len(p.generators) == n else None
    if inv is not None:
        return all(abs(v) <= 1 for v in matvec(inv, d))
    rows = []
    m = len(p.generators)
    for i in range(n):
        rows.append((G[i], d[i]))
        rows.append(([-v for v in G[i]], -d[i]))
    for j in range(m):
        e = [Fraction(int(j == k)) for k in range(m)]
        rows.append((e, Fraction(1)))
        rows.append(([-v for v in e], Fraction(1)))
    return fm_feasible(rows)


def contains(p: Parallelotope, b: Box) -> bool:
    """True iff ``b`` is a subset of ``p`` (vertex test; ``p`` is convex)."""
    _same_dim(p, b)
    if not p.bounding_box().contains_box(b):
        return False
    return all(_point_in(p, v) for v in b.vertices())


def box_difference(a: Box, b: Box) -> list[Box]:
    """Closures of the pieces of ``a`` outside ``b`` (they may share faces with ``b``)."""
    if not a.intersects_box(b):
        return [a]
    pieces = []
    lo, hi = list(a.lo), list(a.hi)
    for i in range(a.dim):
        if lo[i] < b.lo[i]:
            pieces.append(Box(tuple(lo), tuple(hi[:i] + [b.lo[i]] + hi[i + 1:])))
            lo[i] = b.lo[i]
        if hi[i] > b.hi[i]:
            pieces.append(Box(tuple(lo[:i] + [b.hi[i]] + lo[i + 1:]), tuple(hi)))
            hi[i] = b.hi[i]
    return pieces


def covered(box: Box, boxes: Iterable[Box]) -> bool:
    """True iff ``box`` is a subset of the union of ``boxes``."""
    flat = [i for i, w in enumerate(box.widths) if w == 0]
    remaining = [box]
    for b in boxes:
        nxt = []
        for r in remaining:
            for piece in box_difference(r, b):
                # slivers thinner than the original box are covered by closedness
                if all(piece.lo[i] < piece.hi[i] for i in range(box.dim) if i not in flat):
                    nxt.append(piece)
        remaining = nxt
        if not remaining:
            return True
    return not remaining


def union_covers(outer: Iterable[Box], inner: Iterable[Box]) -> bool:
    outer = list(outer)
    return all(covered(b, outer) for b in inner)


# --------------------------------------------------------------------------- partitions


@dataclass(frozen=True)
class Partition:
    """Flat list of closed cells covering ``domain`` with disjoint interiors.

    ``parent[i]`` is the id of the cell that cell ``i`` came from in the partition this
    one was refined from (None for a root partition). Ids of cells that were not split
    never change.
    """

    cells: tuple[Box, ...]
    domain: Box
    parent: "tuple[int, ...] | None" = None

    def __len__(self):
        return len(self.cells)

    def resolution(self) -> Fraction:
        return max(c.diameter() for c in self.cells)

    def digest(self) -> str:
        payload = json.dumps({"domain": self.domain.to_json(), "cells": [c.to_json() for c in self.cells]},
                             sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(payload.encode()).hexdigest()[:16]

    def problems(self) -> list[str]:
        """Structural defects; empty iff this is a valid partition of ``domain``."""
        out = []
        for i, c in enumerate(self.cells):
            if c.dim != self.domain.dim:
                out.append(f"cell {i} has dimension {c.dim}")
            elif not self.domain.contains_box(c):
                out.append(f"cell {i} leaves the domain")
            elif c.volume() == 0:
                out.append(f"cell {i} is degenerate")
        if out:
            return out
        for i, j in overlapping_pairs(self.cells):
            out.append(f"cells {i} and {j} overlap")
        if not out and sum((c.volume() for c in self.cells), Fraction(0)) != self.domain.volume():
            out.append("cells do not cover the domain")
        return out

    def locate(self, x) -> "int | None":
        for i, c in enumerate(self.cells):
            if c.contains_point(x):
                return i
        return None

    def to_json(self) -> dict:
        return {"domain": self.domain.to_json(), "cells": [c.to_json() for c in self.cells]}

    @classmethod
    def from_json(cls, d: dict) -> "Partition":
        return cls(tuple(Box.from_json(c) for c in d["cells"]), Box.from_json(d["domain"]))


def overlapping_pairs(cells: Sequence[Box]) -> list[tuple[int, int]]:
    """Pairs of cells whose interiors meet. Float prefilter, exact confirmation."""
    import numpy as np

    if len(cells) < 2:
        return []
    lo = np.array([[float(v) for v in c.lo] for c in cells])
    hi = np.array([[float(v) for v in c.hi] for c in cells])
    out = []
    for i in range(len(cells) - 1):
        cand = np.all((lo[i] <= hi[i + 1:]) & (lo[i + 1:] <= hi[i]), axis=1)
        for j in np.nonzero(cand)[0]:
            j = int(j) + i + 1
            if cells[i].interior_intersects(cells[j]):
                out.append((i, j))
    return out


def uniform_partition(domain: Box, counts: Sequence[int]) -> Partition:
    """Regular grid with ``counts[i]`` slices on axis i, enumerated in row-major order."""
    if len(counts) != domain.dim or any(c < 1 for c in counts):
        raise GeometryError("one positive count per axis required")
    axes = []
    for i, n in enumerate(counts):
        w = (domain.hi[i] - domain.lo[i]) / n
        axes.append([(domain.lo[i] + k * w, domain.lo[i] + (k + 1) * w) for k in range(n)])
    cells = tuple(Box(tuple(s[0] for s in combo), tuple(s[1] for s in combo)) for combo in itertools.product(*axes))
    return Partition(cells, domain)


def preserves(p: Partition, s: Sequence[Box]) -> bool:
    """Every cell lies inside the union of ``s`` or meets it only on a boundary."""
    s = list(s)
    return all(covered(c, s) or not any(c.interior_intersects(b) for b in s) for c in p.cells)


def subsumes(fine: Partition, coarse: Partition) -> bool:
    return all(any(cc.contains_box(fc) for cc in coarse.cells) for fc in fine.cells)


def split_cells(p: Partition, splits: "dict[int, Sequence[int]]") -> Partition:
    """Bisect each listed cell on each listed axis.

    The first (lowest) piece keeps the cell id; the other pieces are appended in
    ascending order of original id. ``parent`` of the result maps into ``p``.
    """
    cells = list(p.cells)
    parent = list(range(len(cells)))
    extra = []
    for cid in sorted(splits):
        if not 0 <= cid < len(cells):
            raise GeometryError(f"no cell {cid}")
        pieces = [p.cells[cid]]
        for axis in splits[cid]:
            nxt = []
            for piece in pieces:
                nxt.extend(piece.split(axis))
            pieces = nxt
        cells[cid] = pieces[0]
        extra.extend((piece, cid) for piece in pieces[1:])
    for piece, cid in extra:
        cells.append(piece)
        parent.append(cid)
    return Partition(tuple(cells), p.domain, tuple(parent))


def split_cell(p: Partition, cell_id: int, axis: int) -> Partition:
    return split_cells(p, {cell_id: (axis,)})


_BOUNDS_CACHE: dict = {}


def _float_bounds(cells: Sequence[Box]):
    import numpy as np

    key = id(cells)
    hit = _BOUNDS_CACHE.get(key)
    if hit is not None and hit[0] is cells:
        return hit[1], hit[2]
    lo = np.array([[float(v) for v in c.lo] for c in cells])
    hi = np.array([[float(v) for v in c.hi] for c in cells])
    if len(_BOUNDS_CACHE) > 64:
        _BOUNDS_CACHE.clear()
    _BOUNDS_CACHE[key] = (cells, lo, hi)
    return lo, hi


def containing_cell(cells: Sequence[Box], box: Box) -> "int | None":
    """Lowest index of a cell containing ``box``; float prefilter, exact confirmation."""
    import numpy as np

    lo, hi = _float_bounds(cells)
    blo = np.array([float(v) for v in box.lo])
    bhi = np.array([float(v) for v in box.hi])
    for j in np.nonzero(np.all((lo <= blo) & (bhi <= hi), axis=1))[0]:
        if cells[int(j)].contains_box(box):
            return int(j)
    return None
