"""Occupancy mapping from depth scans and fast-marching path planning.

Grids are indexed ``[iy, ix]``; cell (0, 0) has its lower-left corner at
``origin``. Distance fields are in meters of travel at unit speed, with
unknown cells slowed by ``UNKNOWN_PENALTY``.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from scipy import ndimage

from .messages import DepthScan, DiscreteAction, Pose2D, signed_deg

UNKNOWN = 0
FREE = 1
OCCUPIED = 2

UNKNOWN_PENALTY = 1.5
DEFAULT_INFLATION = 0.23  # robot radius + margin
GOAL_TOLERANCE = 0.25


class PlanningError(Exception):
    pass


class Unreachable(PlanningError):
    pass


@dataclass
class OccupancyGrid:
    cells: np.ndarray  # int8 [iy, ix]
    resolution: float
    origin: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        if not self.resolution > 0:
            raise PlanningError("resolution must be positive")

    @classmethod
    def empty(cls, shape: tuple[int, int], resolution: float,
              origin: tuple[float, float] = (0.0, 0.0), fill: int = UNKNOWN) -> "OccupancyGrid":
        return cls(np.full(shape, fill, dtype=np.int8), resolution, origin)

    @classmethod
    def from_bool(cls, occupied: np.ndarray, resolution: float,
                  origin: tuple[float, float] = (0.0, 0.0)) -> "OccupancyGrid":
        cells = np.where(occupied, OCCUPIED, FREE).astype(np.int8)
        return cls(cells, resolution, origin)

    @property
    def shape(self) -> tuple[int, int]:
        return self.cells.shape

    def cell_of(self, x: float, y: float) -> tuple[int, int]:
        return (math.floor((y - self.origin[1]) / self.resolution),
                math.floor((x - self.origin[0]) / self.resolution))

    def center_of(self, iy: int, ix: int) -> tuple[float, float]:
        r = self.resolution
        return (self.origin[0] + (ix + 0.5) * r, self.origin[1] + (iy + 0.5) * r)

    def in_bounds(self, iy: int, ix: int) -> bool:
        return 0 <= iy < self.cells.shape[0] and 0 <= ix < self.cells.shape[1]

    def integrate(self, scan: DepthScan, pose: Pose2D) -> None:
        """Ray-trace one scan into the grid in place (occupied beats free)."""
        r = scan.ranges
        valid = r > 0.0
        if not valid.any():
            return
        res = self.resolution
        ang = np.radians(pose.heading + scan.ray_angles())[valid]
        rng = r[valid]
        dx, dy = np.cos(ang), np.sin(ang)
        h = res / 2.0
        ts = np.arange(0, int(math.ceil(rng.max() / h)) + 1) * h
        sx = pose.x + dx[:, None] * ts[None, :]
        sy = pose.y + dy[:, None] * ts[None, :]
        before = ts[None, :] < (rng[:, None] - h)
        ix = np.floor((sx - self.origin[0]) / res).astype(np.int64)
        iy = np.floor((sy - self.origin[1]) / res).astype(np.int64)
        ny, nx = self.cells.shape
        ok = before & (ix >= 0) & (ix < nx) & (iy >= 0) & (iy < ny)
        fy, fx = iy[ok], ix[ok]
        cur = self.cells[fy, fx]
        self.cells[fy, fx] = np.where(cur == OCCUPIED, OCCUPIED, FREE)

        # max-range readings are "nothing seen", not a hit
        hit = rng < scan.max_range - 1e-9
        hx = pose.x + dx[hit] * rng[hit]
        hy = pose.y + dy[hit] * rng[hit]
        hix = np.floor((hx - self.origin[0]) / res).astype(np.int64)
        hiy = np.floor((hy - self.origin[1]) / res).astype(np.int64)
        ok = (hix >= 0) & (hix < nx) & (hiy >= 0) & (hiy < ny)
        self.cells[hiy[ok], hix[ok]] = OCCUPIED

    def inflated(self, radius: float) -> np.ndarray:
        """Boolean mask of cells within ``radius`` of an occupied cell center."""
        occ = self.cells == OCCUPIED
        if not occ.any():
            return occ
        if radius <= 0:
            return occ
        dist = ndimage.distance_transform_edt(~occ) * self.resolution
        return dist <= radius


def build_occupancy(scans: Iterable[tuple[DepthScan, Pose2D]], resolution: float,
                    shape: tuple[int, int] | None = None,
                    origin: tuple[float, float] | None = None) -> OccupancyGrid:
    """Accumulate scans into a grid. Without ``shape`` the grid covers every pose +- max range."""
    if not resolution > 0:
        raise PlanningError("resolution must be positive")
    scans = list(scans)
    if shape is None or origin is None:
        if not scans:
            return OccupancyGrid.empty((1, 1), resolution)
        reach = max(s.max_range for s, _ in scans) + resolution
        xs = [p.x for _, p in scans]
        ys = [p.y for _, p in scans]
        origin = (min(xs) - reach, min(ys) - reach)
        shape = (int(math.ceil((max(ys) + reach - origin[1]) / resolution)),
                 int(math.ceil((max(xs) + reach - origin[0]) / resolution)))
    grid = OccupancyGrid.empty(shape, resolution, origin)
    for scan, pose in scans:
        grid.integrate(scan, pose)
    return grid


# ---------------------------------------------------------------------------
# fast marching


@dataclass
class DistanceField:
    values: np.ndarray  # meters; inf = unreachable or not computed
    goal: tuple[int, int]
    resolution: float
    origin: tuple[float, float]
    blocked: np.ndarray

    def cell_of(self, x: float, y: float) -> tuple[int, int]:
        return (math.floor((y - self.origin[1]) / self.resolution),
                math.floor((x - self.origin[0]) / self.resolution))

    def value_at(self, x: float, y: float) -> float:
        iy, ix = self.cell_of(x, y)
        ny, nx = self.values.shape
        if not (0 <= iy < ny and 0 <= ix < nx):
            return math.inf
        return float(self.values[iy, ix])


def _speed_steps(grid: OccupancyGrid, blocked: np.ndarray) -> np.ndarray:
    steps = np.full(grid.shape, grid.resolution, dtype=float)
    steps[grid.cells == UNKNOWN] = grid.resolution * UNKNOWN_PENALTY
    steps[blocked] = math.inf
    return steps


def _solve(a: float, b: float, h: float) -> float:
    if a > b:
        a, b = b, a
    if a == math.inf:
        return math.inf
    if b - a >= h:
        return a + h
    return 0.5 * (a + b + math.sqrt(2.0 * h * h - (a - b) * (a - b)))


def local_solution(values: np.ndarray, steps: np.ndarray, iy: int, ix: int,
                   diagonal: bool = True) -> float:
    """Upwind value of cell (iy, ix) from its neighbors' values.

    Used to re-check a finished field cell by cell.
    """
    ny, nx = values.shape

    def v(y, x):
        return values[y, x] if 0 <= y < ny and 0 <= x < nx else math.inf

    def ok(y, x):
        return 0 <= y < ny and 0 <= x < nx and math.isfinite(steps[y, x])

    h = steps[iy, ix]
    best = _solve(min(v(iy, ix - 1), v(iy, ix + 1)), min(v(iy - 1, ix), v(iy + 1, ix)), h)
    if diagonal:
        c = min(v(iy + 1, ix + 1) if ok(iy, ix + 1) and ok(iy + 1, ix) else math.inf,
                v(iy - 1, ix - 1) if ok(iy, ix - 1) and ok(iy - 1, ix) else math.inf)
        d = min(v(iy + 1, ix - 1) if ok(iy, ix - 1) and ok(iy + 1, ix) else math.inf,
                v(iy - 1, ix + 1) if ok(iy, ix + 1) and ok(iy - 1, ix) else math.inf)
        if c < math.inf or d < math.inf:
            best = min(best, _solve(c, d, h * SQRT2))
    return best


SQRT2 = math.sqrt(2.0)


def fast_marching(grid: OccupancyGrid, goal: tuple[float, float] | None = None,
                  inflation: float = DEFAULT_INFLATION,
                  goal_mask: np.ndarray | None = None,
                  stop_at: tuple[float, float] | None = None,
                  stop_margin: float = 0.3,
                  blocked: np.ndarray | None = None,
                  diagonal: bool = True) -> DistanceField:
    """Arrival-time field from ``goal`` (or every cell of ``goal_mask``).

    First-order upwind marching with a binary-heap narrow band. The axis
    stencil is always used; with ``diagonal`` the 45-degree rotated stencil is
    evaluated too and the smaller solution kept, which removes most of the
    staircase bias in narrow diagonal passages. Diagonal neighbors only count
    when both cells they share with the updated cell are traversable.

    With ``stop_at`` the march ends once that point's value is fixed and the
    front has moved ``stop_margin`` meters past it; cells not yet accepted are
    left at +inf.
    """
    if blocked is None:
        blocked = grid.inflated(inflation)
    ny, nx = grid.shape
    seeds: list[tuple[int, int]]
    if goal_mask is not None:
        seeds = [tuple(int(v) for v in c) for c in np.argwhere(goal_mask & ~blocked)]
        if not seeds:
            raise PlanningError("goal mask has no traversable cell")
        goal_cell = seeds[0]
    else:
        if goal is None:
            raise PlanningError("need a goal point or a goal mask")
        goal_cell = grid.cell_of(*goal)
        if not grid.in_bounds(*goal_cell):
            raise PlanningError("goal lies outside the grid")
        if blocked[goal_cell]:
            raise PlanningError("goal lies inside an occupied (inflated) cell")
        seeds = [goal_cell]

    # pad by one blocked cell so neighbor lookups need no bounds checks
    W = nx + 2
    steps_arr = np.full((ny + 2, W), math.inf)
    steps_arr[1:-1, 1:-1] = _speed_steps(grid, blocked)
    steps = steps_arr.ravel().tolist()
    inf = math.inf
    trav = [s != inf for s in steps]
    n = len(steps)
    T = [inf] * n
    acc = [inf] * n  # accepted values; inf while not accepted
    heap: list[tuple[float, int]] = []
    for iy, ix in seeds:
        k = (iy + 1) * W + ix + 1
        T[k] = 0.0
        heap.append((0.0, k))
    heapq.heapify(heap)

    stop_k = -1
    if stop_at is not None:
        sy, sx = grid.cell_of(*stop_at)
        if grid.in_bounds(sy, sx):
            stop_k = (sy + 1) * W + sx + 1
    limit = inf

    if diagonal:
        offsets = (1, -1, W, -W, W + 1, W - 1, -W + 1, -W - 1)
    else:
        offsets = (1, -1, W, -W)
    push, pop = heapq.heappush, heapq.heappop
    sqrt = math.sqrt
    r2 = SQRT2
    while heap:
        t, k = pop(heap)
        if acc[k] != inf:
            continue
        if t > limit:
            break
        acc[k] = t
        if k == stop_k:
            limit = t + stop_margin
        for o in offsets:
            j = k + o
            if acc[j] != inf or not trav[j]:
                continue
            h = steps[j]
            a = acc[j - 1]
            if acc[j + 1] < a:
                a = acc[j + 1]
            b = acc[j - W]
            if acc[j + W] < b:
                b = acc[j + W]
            if a > b:
                a, b = b, a
            if a == inf:
                v = inf
            elif b - a >= h:
                v = a + h
            else:
                v = 0.5 * (a + b + sqrt(2.0 * h * h - (a - b) * (a - b)))
            if diagonal:
                c = inf
                if trav[j + 1] and trav[j + W]:
                    c = acc[j + W + 1]
                if trav[j - 1] and trav[j - W] and acc[j - W - 1] < c:
                    c = acc[j - W - 1]
                d = inf
                if trav[j - 1] and trav[j + W]:
                    d = acc[j + W - 1]
                if trav[j + 1] and trav[j - W] and acc[j - W + 1] < d:
                    d = acc[j - W + 1]
                if c != inf or d != inf:
                    hd = h * r2
                    if c > d:
                        c, d = d, c
                    if d - c >= hd:
                        w = c + hd
                    else:
                        w = 0.5 * (c + d + sqrt(2.0 * hd * hd - (c - d) * (c - d)))
                    if w < v:
                        v = w
            if v < T[j]:
                T[j] = v
                push(heap, (v, j))

    values = np.array(acc, dtype=float).reshape(ny + 2, W)[1:-1, 1:-1].copy()
    return DistanceField(values, goal_cell, grid.resolution, grid.origin, blocked)


# ---------------------------------------------------------------------------
# path extraction


def _bilinear_grad(values: np.ndarray, fy: float, fx: float) -> tuple[float, float, float]:
    """Value and gradient of the bilinear interpolant at continuous cell coords.

    Cell centers sit at integer + 0.5. Returns inf value when any corner is infinite.
    """
    ny, nx = values.shape
    gx, gy = fx - 0.5, fy - 0.5
    x0 = min(max(int(math.floor(gx)), 0), nx - 2)
    y0 = min(max(int(math.floor(gy)), 0), ny - 2)
    tx, ty = gx - x0, gy - y0
    v00 = values[y0, x0]
    v01 = values[y0, x0 + 1]
    v10 = values[y0 + 1, x0]
    v11 = values[y0 + 1, x0 + 1]
    if not (math.isfinite(v00) and math.isfinite(v01) and math.isfinite(v10) and math.isfinite(v11)):
        return math.inf, 0.0, 0.0
    val = (v00 * (1 - tx) * (1 - ty) + v01 * tx * (1 - ty) + v10 * (1 - tx) * ty + v11 * tx * ty)
    ddx = (v01 - v00) * (1 - ty) + (v11 - v10) * ty
    ddy = (v10 - v00) * (1 - tx) + (v11 - v01) * tx
    return float(val), float(ddx), float(ddy)


_NEIGHBORS8 = ((0, 1), (0, -1), (1, 0), (-1, 0), (1, 1), (1, -1), (-1, 1), (-1, -1))


def extract_path(field: DistanceField, start: tuple[float, float],
                 max_iter: int | None = None) -> list[tuple[float, float]]:
    """Steepest descent from ``start`` to the goal cell on the interpolated field."""
    values = field.values
    ny, nx = values.shape
    res = field.resolution
    ox, oy = field.origin
    iy, ix = field.cell_of(*start)
    if not (0 <= iy < ny and 0 <= ix < nx) or not math.isfinite(values[iy, ix]):
        raise Unreachable(f"start {start} is unreachable")
    if max_iter is None:
        max_iter = 4 * (nx + ny) + int(4 * values[iy, ix] / res) + 10

    fx, fy = (start[0] - ox) / res, (start[1] - oy) / res
    path = [(float(start[0]), float(start[1]))]
    step = 0.5  # cells
    for _ in range(max_iter):
        cy, cx = int(math.floor(fy)), int(math.floor(fx))
        cur = values[cy, cx]
        if cur == 0.0:
            break
        val, gx, gy = (math.inf, 0.0, 0.0)
        if 1 <= fx < nx - 1 and 1 <= fy < ny - 1:
            val, gx, gy = _bilinear_grad(values, fy, fx)
        moved = False
        g = math.hypot(gx, gy)
        if math.isfinite(val) and g > 1e-12:
            qx, qy = fx - step * gx / g, fy - step * gy / g
            qcy, qcx = int(math.floor(qy)), int(math.floor(qx))
            if 0 <= qcy < ny and 0 <= qcx < nx and math.isfinite(values[qcy, qcx]):
                qv, _, _ = _bilinear_grad(values, qy, qx)
                if values[qcy, qcx] <= cur or (math.isfinite(qv) and qv < val):
                    fx, fy = qx, qy
                    moved = True
        if not moved:
            # discrete fallback: hop to the center of the lowest admissible neighbor
            best, by, bx = cur, -1, -1
            for dy, dx in _NEIGHBORS8:
                jy, jx = cy + dy, cx + dx
                if not (0 <= jy < ny and 0 <= jx < nx):
                    continue
                if dy and dx and not (math.isfinite(values[cy + dy, cx]) and math.isfinite(values[cy, cx + dx])):
                    continue
                if values[jy, jx] < best:
                    best, by, bx = values[jy, jx], jy, jx
            if by < 0:
                raise PlanningError("descent stalled in a local minimum")
            fx, fy = bx + 0.5, by + 0.5
        path.append((ox + fx * res, oy + fy * res))
    else:
        raise PlanningError("descent did not reach the goal")
    return path


def path_length(path: Sequence[tuple[float, float]]) -> float:
    return float(sum(math.dist(a, b) for a, b in zip(path, path[1:])))


# ---------------------------------------------------------------------------
# discretization


def densify(path: Sequence[tuple[float, float]], spacing: float = 0.05) -> np.ndarray:
    pts = np.asarray(path, dtype=float).reshape(-1, 2)
    out = [pts[0]]
    for a, b in zip(pts, pts[1:]):
        n = max(1, int(math.ceil(math.dist(a, b) / spacing)))
        t = np.arange(1, n + 1)[:, None] / n
        out.extend(a + (b - a) * t)
    return np.array(out)


def _lookahead(pts: np.ndarray, x: float, y: float, dist: float) -> tuple[float, float]:
    """First point after the one nearest (x, y) that lies at least ``dist`` away."""
    d = np.hypot(pts[:, 0] - x, pts[:, 1] - y)
    i = int(np.argmin(d))
    ahead = np.nonzero(d[i + 1:] >= dist)[0]
    j = i + 1 + int(ahead[0]) if ahead.size else len(pts) - 1
    return float(pts[j, 0]), float(pts[j, 1])


def path_to_actions(path: Sequence[tuple[float, float]], pose: Pose2D, step: float = 0.25,
                    turn: float = 30.0, tolerance: float = GOAL_TOLERANCE,
                    max_actions: int = 200, lookahead: float = 0.5) -> list[DiscreteAction]:
    """Greedy quantized following of ``path`` from ``pose``.

    Each stage turns by the multiple of ``turn`` nearest the bearing to the
    next waypoint (leaving at most turn/2 of residual) and steps forward.
    """
    if not path:
        raise PlanningError("empty path")
    pts = densify(path)
    end = pts[-1]
    x, y, h = pose.x, pose.y, pose.heading
    actions: list[DiscreteAction] = []
    # a remaining distance equal to the tolerance still earns one more step
    while math.hypot(end[0] - x, end[1] - y) >= tolerance - 1e-9 and len(actions) < max_actions:
        tx, ty = _lookahead(pts, x, y, lookahead)
        bearing = math.degrees(math.atan2(ty - y, tx - x))
        k = int(round(signed_deg(bearing - h) / turn))
        for _ in range(abs(k)):
            actions.append(DiscreteAction.left(turn) if k > 0 else DiscreteAction.right(turn))
        h += k * turn
        actions.append(DiscreteAction.forward(step))
        x += step * math.cos(math.radians(h))
        y += step * math.sin(math.radians(h))
    return actions


def first_action(path: Sequence[tuple[float, float]], pose: Pose2D, step: float = 0.25,
                 turn: float = 30.0, tolerance: float = GOAL_TOLERANCE,
                 lookahead: float = 0.5) -> DiscreteAction | None:
    """Next action toward the end of ``path``, or None when already within tolerance."""
    acts = path_to_actions(path, pose, step, turn, tolerance, max_actions=1, lookahead=lookahead)
    return acts[0] if acts else None


def clip_goal_along_ray(blocked: np.ndarray, grid: OccupancyGrid, start: tuple[float, float],
                        heading_deg: float, distance: float) -> tuple[float, float]:
    """Walk from ``start`` along ``heading_deg`` and stop at the last unblocked cell."""
    th = math.radians(heading_deg)
    c, s = math.cos(th), math.sin(th)
    h = grid.resolution / 2.0
    last = start
    t = 0.0
    while t <= distance + 1e-12:
        px, py = start[0] + c * t, start[1] + s * t
        iy, ix = grid.cell_of(px, py)
        if not grid.in_bounds(iy, ix) or blocked[iy, ix]:
            if t > 0:
                break
        else:
            last = (px, py)
        t += h
    return last
