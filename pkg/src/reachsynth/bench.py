"""Benchmark generators: piecewise-linear Dubins vehicle, conveyors, gridworlds, random corpora."""
from __future__ import annotations

import math
import random
from dataclasses import dataclass
from fractions import Fraction as F

from .geometry import Box, uniform_partition
from .model import AffineDynamics, Location, PiecewiseAffineSystem, Problem


def _rat(x: float, den: int) -> F:
    return F(round(x * den), den)


def _complement_cells(cells, unsafe_ids):
    return [c for i, c in enumerate(cells) if i not in unsafe_ids]


# --------------------------------------------------------------------------- vehicle


@dataclass(frozen=True)
class VehicleConfig:
    theta_bins: int = 6
    v_bins: int = 4
    x_range: tuple = (F(0), F(8))
    y_range: tuple = (F(0), F(4))
    v_range: tuple = (F(0), F(2))
    theta_range: tuple = (F(-1, 2), F(11, 2))
    accel: tuple = (F(0), F(1, 2))
    steer: tuple = (F(-1, 2), F(0), F(1, 2))
    denominator: int = 2 ** 20
    tangent: bool = False

    @property
    def n_locations(self) -> int:
        return self.theta_bins * self.v_bins

    def v_edges(self):
        lo, hi = self.v_range
        return [lo + (hi - lo) * j / self.v_bins for j in range(self.v_bins + 1)]

    def theta_edges(self):
        lo, hi = self.theta_range
        return [lo + (hi - lo) * j / self.theta_bins for j in range(self.theta_bins + 1)]


def vehicle_coefficients(cfg: VehicleConfig) -> list[dict]:
    """Per-location (v-bin, theta-bin) coefficients of the discrete vehicle map.

    ``x+ = x + a v + b``, ``y+ = y + c v + d``, ``v+ = v + alpha``, ``theta+ = theta + e beta``
    with ``a = cos(theta_mid)``, ``c = sin(theta_mid)`` and ``e = v_mid``, except that the
    slowest bin cannot steer (``e = 0``). The tangent variant adds the theta-dependence
    of ``v cos(theta)`` / ``v sin(theta)`` around the bin midpoint.
    """
    out = []
    ve, te = cfg.v_edges(), cfg.theta_edges()
    den = cfg.denominator
    for iv in range(cfg.v_bins):
        vm = (ve[iv] + ve[iv + 1]) / 2
        for it in range(cfg.theta_bins):
            tm = (te[it] + te[it + 1]) / 2
            ct, st = math.cos(float(tm)), math.sin(float(tm))
            row = {"v_bin": iv, "theta_bin": it, "v_mid": vm, "theta_mid": tm,
                   "a": _rat(ct, den), "c": _rat(st, den), "b": F(0), "d": F(0),
                   "e": F(0) if iv == 0 else vm, "a_theta": F(0), "c_theta": F(0)}
            if cfg.tangent:
                row["a_theta"] = _rat(-float(vm) * st, den)
                row["c_theta"] = _rat(float(vm) * ct, den)
                row["b"] = -row["a_theta"] * tm
                row["d"] = -row["c_theta"] * tm
            out.append(row)
    return out


def dubins_pwl(cfg: "VehicleConfig | None" = None) -> PiecewiseAffineSystem:
    cfg = cfg or VehicleConfig()
    ve, te = cfg.v_edges(), cfg.theta_edges()
    locs = []
    for co in vehicle_coefficients(cfg):
        iv, it = co["v_bin"], co["theta_bin"]
        inv = Box((cfg.x_range[0], cfg.y_range[0], ve[iv], te[it]),
                  (cfg.x_range[1], cfg.y_range[1], ve[iv + 1], te[it + 1]))
        A = [[1, 0, co["a"], co["a_theta"]],
             [0, 1, co["c"], co["c_theta"]],
             [0, 0, 1, 0],
             [0, 0, 0, 1]]
        B = [[0, 0], [0, 0], [1, 0], [0, co["e"]]]
        locs.append(Location(inv, AffineDynamics(A, B, [co["b"], co["d"], 0, 0])))
    X = Box((cfg.x_range[0], cfg.y_range[0], cfg.v_range[0], cfg.theta_range[0]),
            (cfg.x_range[1], cfg.y_range[1], cfg.v_range[1], cfg.theta_range[1]))
    U = Box((min(cfg.accel), min(cfg.steer)), (max(cfg.accel), max(cfg.steer)))
    inputs = [(a, b) for a in cfg.accel for b in cfg.steer]
    return PiecewiseAffineSystem(X, U, inputs, locs)


def vehicle_instance(cfg: VehicleConfig, xy_counts=(8, 4), unsafe_xy=((3, 1), (3, 2), (5, 0), (5, 1)),
                     name="vehicle") -> Problem:
    """Control grid = xy slices x the location bins; Init at the bottom-left slice, Goal at the
    top-right slice (all speeds and headings), unsafe blocks on the listed xy slices."""
    sys = dubins_pwl(cfg)
    nx, ny = xy_counts
    C = uniform_partition(sys.state_space, [nx, ny, cfg.v_bins, cfg.theta_bins])
    X = sys.state_space
    wx = (cfg.x_range[1] - cfg.x_range[0]) / nx
    wy = (cfg.y_range[1] - cfg.y_range[0]) / ny

    def column(i, j):
        return Box((X.lo[0] + i * wx, X.lo[1] + j * wy, X.lo[2], X.lo[3]),
                   (X.lo[0] + (i + 1) * wx, X.lo[1] + (j + 1) * wy, X.hi[2], X.hi[3]))

    ve, te = cfg.v_edges(), cfg.theta_edges()
    # slowest bin, heading bin nearest 0
    it0 = min(range(cfg.theta_bins), key=lambda t: abs(te[t] + te[t + 1]))
    init = Box((X.lo[0], X.lo[1], ve[0], te[it0]), (X.lo[0] + wx, X.lo[1] + wy, ve[1], te[it0 + 1]))
    goal = column(nx - 1, ny - 1)
    bad = set(unsafe_xy)
    safe = [column(i, j) for i in range(nx) for j in range(ny) if (i, j) not in bad]
    return Problem(sys, C, [init], safe, [goal], name=name)


def full_scale_instance() -> Problem:
    """768 control cells: 8 x 4 position slices times 24 (speed, heading) locations."""
    return vehicle_instance(VehicleConfig(), (8, 4), name="dubins24")


paper_scale_instance = full_scale_instance


def desk_vehicle_instance() -> Problem:
    cfg = VehicleConfig(theta_bins=3, v_bins=2, theta_range=(F(-1, 2), F(5, 2)), x_range=(F(0), F(3)),
                        y_range=(F(0), F(2)), v_range=(F(0), F(1)))
    return vehicle_instance(cfg, (3, 2), unsafe_xy=((1, 1),), name="dubins-desk")


# --------------------------------------------------------------------------- conveyors


def translation_system(X: Box, inputs) -> PiecewiseAffineSystem:
    n = X.dim
    eye = [[int(i == j) for j in range(n)] for i in range(n)]
    pts = [tuple(F(v) for v in u) for u in inputs]
    U = Box(tuple(min(u[j] for u in pts) for j in range(n)), tuple(max(u[j] for u in pts) for j in range(n)))
    return PiecewiseAffineSystem(X, U, pts, [Location(X, AffineDynamics(eye, eye, [0] * n))])


def conveyor(n: int = 4, step=1, blocked: bool = False, goal_cells: int = 1) -> Problem:
    """1D belt of ``n`` unit cells, Init the first, Goal the last ``goal_cells``; inputs
    back/stay/forward by ``step``.

    ``blocked`` drops the forward input so Goal is unreachable.
    """
    X = Box((F(0),), (F(n),))
    s = F(step)
    inputs = [(-s,), (F(0),)] if blocked else [(-s,), (F(0),), (s,)]
    sys = translation_system(X, inputs)
    C = uniform_partition(X, [n])
    goal = Box((F(n - goal_cells),), (F(n),))
    name = f"conveyor{n}" + (f"-step{step}" if s != 1 else "") + ("-blocked" if blocked else "")
    return Problem(sys, C, [C.cells[0]], [X], [goal], name=name)


def contracting_1d() -> Problem:
    """``x+ = x/2 + 1/4`` on [0, 1]; everything flows to the fixed point 1/2."""
    X = Box((F(0),), (F(1),))
    sys = PiecewiseAffineSystem(X, Box((F(0),), (F(0),)), [(F(0),)],
                                [Location(X, AffineDynamics([[F(1, 2)]], [[1]], [F(1, 4)]))])
    C = uniform_partition(X, [2])
    return Problem(sys, C, [C.cells[0]], [X], [C.cells[1]], name="contract1d")


def margin_instance() -> tuple[Problem, F]:
    """Contracting belt with a known robustness margin.

    Each unit cell of [0, 4] is its own location with ``x+ = m + (x - m)/2 + u`` (m the cell
    centre), inputs ``u`` in {0, +1}. Forward images sit 1/4 inside the next cell, so
    offsets below 1/4 keep every image in its cell and offsets of 1/4 or more do not.
    """
    X = Box((F(0),), (F(4),))
    locs = []
    for j in range(4):
        m = F(2 * j + 1, 2)
        locs.append(Location(Box((F(j),), (F(j + 1),)), AffineDynamics([[F(1, 2)]], [[1]], [m / 2])))
    sys = PiecewiseAffineSystem(X, Box((F(0),), (F(1),)), [(F(0),), (F(1),)], locs)
    C = uniform_partition(X, [4])
    return Problem(sys, C, [C.cells[0]], [X], [C.cells[3]], name="margin"), F(1, 4)


# --------------------------------------------------------------------------- gridworlds

LAYOUTS = ("open", "blocks", "walled", "init-in-goal")


def gridworld(nx: int = 4, ny: int = 4, layout: str = "open", step=F(3, 2), k: int = 1) -> Problem:
    """Unit-cell grid with ``x+ = x + u``, inputs ``±step`` on each axis plus stay.

    Init is the bottom-left cell and Goal the top-right 2x2 block. ``blocks`` adds two
    unsafe cells on the left edge, ``walled`` a two-column wall over the full height between them,
    ``init-in-goal`` puts Init inside Goal.
    """
    if layout not in LAYOUTS:
        raise ValueError(f"unknown layout {layout!r}; choose from {LAYOUTS}")
    if layout != "init-in-goal" and (nx < 2 or ny < 2):
        raise ValueError("gridworld needs nx, ny >= 2")
    s = F(step)
    X = Box((F(0), F(0)), (F(nx), F(ny)))
    inputs = [(s, 0), (-s, 0), (0, s), (0, -s), (0, 0)]
    sys = translation_system(X, inputs)
    C = uniform_partition(X, [nx, ny])

    def cell(i, j):
        return C.cells[i * ny + j]

    gx, gy = max(nx - 2, 0), max(ny - 2, 0)
    goal = [Box((F(gx), F(gy)), (F(nx), F(ny)))]
    init = [cell(0, 0)]
    unsafe = set()
    if layout == "blocks":
        # two separate single-cell blocks on the left edge
        unsafe = {(0, 1), (0, ny - 1)} if ny >= 4 else {(0, ny - 1)}
    elif layout == "walled":
        if nx < 6:
            raise ValueError("walled layout needs nx >= 6 (init, gap, two-column wall, goal)")
        unsafe = {(i, j) for i in (2, 3) for j in range(ny)}
    elif layout == "init-in-goal":
        init = [cell(nx - 1, ny - 1)]
    ids = {i * ny + j for i, j in unsafe}
    safe = _complement_cells(C.cells, ids)
    return Problem(sys, C, init, safe, goal, k=k, name=f"grid{nx}x{ny}-{layout}")


# --------------------------------------------------------------------------- random corpus


FAMILIES = ("aligned", "pwa", "cellwise")


def random_instance(rng: random.Random, family: "str | None" = None, max_cells: int = 8,
                    max_inputs: int = 4) -> Problem:
    """Small 1D/2D reach-avoid instance for oracle comparisons.

    ``aligned``: integer translations on unit cells, so exact posts are cell unions.
    ``pwa``: diagonal maps with dyadic coefficients on one or two locations.
    ``cellwise``: every control cell is a location contracting towards its centre before
    an integer shift, so images can sit strictly inside other cells.
    """
    if family is None:
        family = rng.choices(FAMILIES, weights=(4, 3, 3))[0]
    if family not in FAMILIES:
        raise ValueError(f"unknown family {family!r}")
    dim = rng.choice((1, 2))
    if dim == 1:
        counts = [rng.randint(3, max_cells)]
    else:
        nx = rng.randint(2, 3)
        counts = [nx, rng.randint(2, max(2, min(4, max_cells // nx)))]
    X = Box(tuple(F(0) for _ in counts), tuple(F(c) for c in counts))
    C = uniform_partition(X, counts)
    n_u = rng.randint(2, max_inputs)
    eye = [[int(i == j) for j in range(dim)] for i in range(dim)]
    if family == "cellwise":
        moves = [tuple(F(s * (i == j)) for i in range(dim)) for j in range(dim) for s in (1, -1)]
        inputs = rng.sample(moves + [tuple(F(0) for _ in range(dim))], min(n_u, 2 * dim + 1))
    elif family == "aligned":
        pool = [tuple(F(rng.randint(-2, 2)) for _ in range(dim)) for _ in range(4 * n_u)]
        inputs = list(dict.fromkeys(pool))[:n_u]
        while len(inputs) < 2:
            inputs.append(tuple(F(rng.choice((-2, 2))) if j == 0 else F(0) for j in range(dim)))
            inputs = list(dict.fromkeys(inputs))
    else:
        inputs = list(dict.fromkeys(tuple(F(rng.randint(-6, 6), 4) for _ in range(dim)) for _ in range(n_u)))
    U = Box(tuple(min(u[j] for u in inputs) for j in range(dim)),
            tuple(max(u[j] for u in inputs) for j in range(dim)))
    if family == "aligned":
        sys = translation_system(X, inputs)
    elif family == "cellwise":
        locs = []
        for cell in C.cells:
            f = rng.choice((F(1, 2), F(1, 4), F(3, 4)))
            A = [[f if i == j else F(0) for j in range(dim)] for i in range(dim)]
            c = [m * (1 - f) for m in cell.center]
            locs.append(Location(cell, AffineDynamics(A, eye, c)))
        sys = PiecewiseAffineSystem(X, U, inputs, locs)
    else:
        cut = rng.randint(1, counts[0] - 1) if counts[0] > 1 and rng.random() < 0.5 else None
        pieces = [X] if cut is None else list(_split_at(X, cut))
        locs = []
        for inv in pieces:
            diag = [rng.choice((F(1, 2), F(3, 4), F(1), F(1), F(5, 4))) for _ in range(dim)]
            A = [[diag[i] if i == j else F(0) for j in range(dim)] for i in range(dim)]
            c = [F(rng.randint(-2, 2), 4) for _ in range(dim)]
            locs.append(Location(inv, AffineDynamics(A, eye, c)))
        sys = PiecewiseAffineSystem(X, U, inputs, locs)
    n = len(C.cells)
    ids = list(range(n))
    goal_id = rng.choice(ids)
    init_id = goal_id if rng.random() < 0.05 else rng.choice([i for i in ids if i != goal_id])
    others = [i for i in ids if i not in (goal_id, init_id)]
    unsafe = set(rng.sample(others, min(len(others), rng.randint(0, 2))))
    safe = _complement_cells(C.cells, unsafe)
    max_rank = rng.choice((None, None, 2, 3))
    return Problem(sys, C, [C.cells[init_id]], safe, [C.cells[goal_id]], max_rank=max_rank,
                   name=f"random-{family}")


def _split_at(X: Box, cut: int):
    lo, hi = list(X.lo), list(X.hi)
    left_hi = [F(cut)] + hi[1:]
    right_lo = [F(cut)] + lo[1:]
    return Box(tuple(lo), tuple(left_hi)), Box(tuple(right_lo), tuple(hi))


PRESETS = {
    "dubins24": full_scale_instance,
    "dubins-desk": desk_vehicle_instance,
    "grid4x4": lambda: gridworld(4, 4, "open"),
    "grid4x4-blocks": lambda: gridworld(4, 4, "blocks"),
    "grid6x4-walled": lambda: gridworld(6, 4, "walled"),
    "grid-init-in-goal": lambda: gridworld(2, 2, "init-in-goal"),
    "conveyor4": lambda: conveyor(4),
    "conveyor4-blocked": lambda: conveyor(4, blocked=True),
    "conveyor4-step2": lambda: conveyor(4, step=2, goal_cells=2),
    "contract1d": contracting_1d,
    "margin": lambda: margin_instance()[0],
}


def preset(name: str) -> Problem:
    try:
        return PRESETS[name]()
    except KeyError:
        raise KeyError(f"unknown preset {name!r}; available: {', '.join(sorted(PRESETS))}") from None
