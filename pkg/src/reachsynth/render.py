"""Static SVG/CSV views of partitions, Must/May sets, controllers and ranks."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from xml.sax.saxutils import escape

from .certify import Certificate
from .geometry import Partition, covered
from .model import Problem, classify
from .post import build_table, cell_choices, fixed_point

ROLES = ("must", "may", "unsafe", "goal", "init", "free")
DEFAULT_COLORS = {
    "must": "#9ecae1",
    "may": "#3182bd",
    "unsafe": "#de2d26",
    "goal": "#31a354",
    "init": "#a1d99b",
    "free": "#ffffff",
}
# painted bottom to top so Must stays visible over May in projections
_PAINT_ORDER = ("free", "init", "goal", "may", "must", "unsafe")


@dataclass(frozen=True)
class RenderSpec:
    axes: tuple = (0, 1)
    colors: dict = field(default_factory=lambda: dict(DEFAULT_COLORS))
    labels: str = "none"  # none | rank | input
    width: int = 640

    def check(self, dim: int):
        a, b = self.axes
        if dim == 1:
            # 1D problems are drawn as a strip along axis 0
            if a != 0:
                raise ValueError(f"projection axes {self.axes} invalid for a 1D problem")
        elif a == b or not (0 <= a < dim and 0 <= b < dim):
            raise ValueError(f"projection axes {self.axes} must be distinct and below dimension {dim}")
        if self.labels not in ("none", "rank", "input"):
            raise ValueError(f"label mode {self.labels!r} not in none/rank/input")
        missing = set(ROLES) - set(self.colors)
        if missing:
            raise ValueError(f"colour map lacks roles {sorted(missing)}")


@dataclass(frozen=True)
class CellRow:
    cell: int
    role: str
    rank: "int | None"
    input: "int | None"


def must_may(problem: Problem, cert: Certificate) -> tuple[frozenset, frozenset]:
    """Least Must (under) and May (over) sets of the certificate's controller."""
    part = cert.partition
    table = build_table(problem.system, part, problem.control)
    classes = classify(problem, part)
    choice = cell_choices(table, cert.controller)
    must = fixed_point(table.under, choice, classes.init)
    may = fixed_point(table.over, choice, classes.init)
    return frozenset(p for p in must if p >= 0), frozenset(p for p in may if p >= 0)


def cell_rows(problem: Problem, cert: "Certificate | None" = None) -> list[CellRow]:
    part = cert.partition if cert is not None else Partition(problem.control.cells, problem.control.domain)
    classes = classify(problem, part)
    must = may = frozenset()
    if cert is not None:
        must, may = must_may(problem, cert)
    rows = []
    for p in range(len(part)):
        if p in must:
            role = "must"
        elif p in may:
            role = "may"
        elif p not in classes.safe:
            role = "unsafe"
        elif p in classes.goal:
            role = "goal"
        elif p in classes.init:
            role = "init"
        else:
            role = "free"
        c = classes.control_of[p]
        rows.append(CellRow(p, role, cert.ranking[c] if cert else None, cert.controller[c] if cert else None))
    return rows


def to_csv(rows: list[CellRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["cell", "role", "rank", "input"])
    for r in rows:
        w.writerow([r.cell, r.role, "" if r.rank is None else r.rank, "" if r.input is None else r.input])
    return buf.getvalue()


def _extent(box, axis):
    return (box.lo[axis], box.hi[axis]) if axis < box.dim else (0, 1)


def grid_lines(problem: Problem, axes) -> tuple[list, list]:
    """Distinct control-cell boundaries along each projection axis."""
    a, b = axes
    cells = problem.control.cells
    xs = sorted({v for c in cells for v in _extent(c, a)})
    ys = sorted({v for c in cells for v in _extent(c, b)}) if problem.system.dim > 1 else [0, 1]
    return xs, ys


def to_svg(problem: Problem, rows: list[CellRow], partition: Partition, spec: "RenderSpec | None" = None) -> str:
    spec = spec or RenderSpec()
    spec.check(problem.system.dim)
    a, b = spec.axes
    if problem.system.dim == 1:
        b = 1
    X = problem.system.state_space
    (x0, x1), (y0, y1) = _extent(X, a), _extent(X, b)
    if y1 == y0:
        y1 = y0 + 1
    scale = spec.width / float(x1 - x0)
    height = float(y1 - y0) * scale

    def px(v):
        return round(float(v - x0) * scale, 3)

    def py(v):
        return round(height - float(v - y0) * scale, 3)

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{spec.width}" height="{round(height, 3)}" '
           f'viewBox="0 0 {spec.width} {round(height, 3)}">']
    by_role = {r: [] for r in ROLES}
    for row in rows:
        by_role[row.role].append(row)
    for role in _PAINT_ORDER:
        out.append(f'<g class="{role}" fill="{spec.colors[role]}">')
        for row in by_role[role]:
            (ca, da), (cb, db) = _extent(partition.cells[row.cell], a), _extent(partition.cells[row.cell], b)
            out.append(f'<rect data-cell="{row.cell}" x="{px(ca)}" y="{py(db)}" '
                       f'width="{round(float(da - ca) * scale, 3)}" '
                       f'height="{round(float(db - cb) * scale, 3)}"/>')
        out.append("</g>")
    xs, ys = grid_lines(problem, (a, b))
    out.append('<g class="grid" stroke="#000000" stroke-width="1">')
    for v in xs:
        out.append(f'<line class="vline" x1="{px(v)}" y1="0" x2="{px(v)}" y2="{round(height, 3)}"/>')
    for v in ys:
        out.append(f'<line class="hline" x1="0" y1="{py(v)}" x2="{spec.width}" y2="{py(v)}"/>')
    out.append("</g>")
    if spec.labels != "none":
        out.append('<g class="labels" font-size="10" text-anchor="middle">')
        for row in rows:
            val = row.rank if spec.labels == "rank" else row.input
            if val is None:
                continue
            (ca, da), (cb, db) = _extent(partition.cells[row.cell], a), _extent(partition.cells[row.cell], b)
            cx, cy = (ca + da) / 2, (cb + db) / 2
            out.append(f'<text x="{px(cx)}" y="{py(cy)}">{escape(str(val))}</text>')
        out.append("</g>")
    out.append("</svg>")
    return "\n".join(out) + "\n"


def render(problem: Problem, cert: "Certificate | None" = None, spec: "RenderSpec | None" = None) -> tuple[str, str]:
    """(svg, csv) for ``problem`` and optionally a certificate."""
    rows = cell_rows(problem, cert)
    part = cert.partition if cert is not None else problem.control
    return to_svg(problem, rows, part, spec), to_csv(rows)


def is_region_inside(partition: Partition, inner, outer) -> bool:
    """Point-set inclusion of two cell sets of the same partition."""
    boxes = [partition.cells[p] for p in outer]
    return all(covered(partition.cells[p], boxes) for p in inner)
