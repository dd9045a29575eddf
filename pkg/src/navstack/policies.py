"""Navigation policies.

* ``VlvPolicy`` - modular policy: 12-view panorama at each node, view scoring,
  a short-term goal 1.5 m along the chosen view, and a fast-marching low-level
  planner that drives there.
* ``RandomPolicy`` and ``OraclePolicy`` - negative and positive controls.
* ``ExternalPolicy`` - adapter for end-to-end models that emit the extended
  7-token action set (look_up / look_down are remapped).
"""

from __future__ import annotations

import enum
import hashlib
import importlib
import math
from dataclasses import dataclass, field
from typing import Callable, Protocol, Sequence

import numpy as np

from .messages import DepthScan, DiscreteAction, Pose2D, SemanticScan
from .planner import (FREE, OCCUPIED, UNKNOWN, DistanceField, OccupancyGrid, PlanningError, clip_goal_along_ray,
                      extract_path, fast_marching, first_action)
from .sim_world import WorldMap, check_collision, distance_to_object
from .vsn_core import Observation, PolicyFailed

N_VIEWS = 12
VIEW_STEP_DEG = 30.0
GOAL_OFFSET = 1.5
STEP_M = 0.25


class PolicyError(PolicyFailed):
    pass


# ---------------------------------------------------------------------------
# action remapping for end-to-end models


class ModelAction(str, enum.Enum):
    MOVE_FORWARD = "MOVE_FORWARD"
    MOVE_BACKWARD = "MOVE_BACKWARD"
    TURN_LEFT = "TURN_LEFT"
    TURN_RIGHT = "TURN_RIGHT"
    STOP = "STOP"
    LOOK_UP = "LOOK_UP"
    LOOK_DOWN = "LOOK_DOWN"


def remap_action(token: str | ModelAction | DiscreteAction) -> DiscreteAction:
    """Map a model token onto the robot's action set.

    The camera cannot tilt, so LOOK_UP becomes a step back and LOOK_DOWN a step forward.
    """
    if isinstance(token, DiscreteAction):
        return token
    try:
        tok = ModelAction(str(token.value if isinstance(token, enum.Enum) else token).upper())
    except ValueError:
        raise PolicyError(f"unknown action token {token!r}") from None
    if tok is ModelAction.LOOK_UP:
        return DiscreteAction.backward(STEP_M)
    if tok is ModelAction.LOOK_DOWN:
        return DiscreteAction.forward(STEP_M)
    return {
        ModelAction.MOVE_FORWARD: DiscreteAction.forward(STEP_M),
        ModelAction.MOVE_BACKWARD: DiscreteAction.backward(STEP_M),
        ModelAction.TURN_LEFT: DiscreteAction.left(VIEW_STEP_DEG),
        ModelAction.TURN_RIGHT: DiscreteAction.right(VIEW_STEP_DEG),
        ModelAction.STOP: DiscreteAction.stop(),
    }[tok]


# ---------------------------------------------------------------------------
# view scoring


@dataclass(frozen=True)
class Detection:
    category: str
    distance: float  # estimated distance to the object's center
    confidence: float
    bearing: float  # degrees, relative to the view heading
    clipped: bool = False  # blob touches the image border


@dataclass(frozen=True)
class ViewScore:
    view_index: int
    value: float
    detection: Detection | None = None


def detect(semantic: SemanticScan, target: str) -> list[Detection]:
    """Split rays labelled ``target`` into blobs and estimate each blob's center distance.

    For a disc of radius R at center distance D the nearest surface point is
    D - R away and the disc spans a half-angle phi with sin(phi) = R / D, so
    D = d_min / (1 - sin(phi)).
    """
    mask = np.array([lab == target for lab in semantic.labels]) & np.asarray(semantic.visible, bool)
    if not mask.any():
        return []
    n = semantic.n_rays
    spacing = semantic.fov / n if n > 1 else 0.0
    angles = semantic.ray_angles()
    ranges = semantic.hit_ranges
    idx = np.nonzero(mask)[0]
    blobs: list[list[int]] = [[int(idx[0])]]
    for i in idx[1:]:
        prev = blobs[-1][-1]
        if i == prev + 1 and abs(ranges[i] - ranges[prev]) < 0.3:
            blobs[-1].append(int(i))
        else:
            blobs.append([int(i)])
    out = []
    for b in blobs:
        rs = ranges[b]
        d_min = float(rs.min())
        half = 0.5 * len(b) * spacing
        s = math.sin(math.radians(min(half, 80.0)))
        dist = d_min / (1.0 - s)
        bearing = float(0.5 * (angles[b[0]] + angles[b[-1]]))
        clipped = b[0] == 0 or b[-1] == n - 1
        out.append(Detection(target, dist, 1.0, bearing, clipped))
    out.sort(key=lambda d: (d.clipped, d.distance))
    return out


class ViewScorer(Protocol):
    def score(self, view: tuple[SemanticScan, DepthScan], target: str, view_index: int) -> ViewScore: ...


class HeuristicScorer:
    """Stand-in for a learned value function plus object detector.

    Visible target: value 10 / (1 + hit distance). Otherwise the mean nonzero
    depth of the view, so open directions look promising. ``false_negative``
    drops detections with that probability, deterministically per view.
    """

    def __init__(self, false_negative: float = 0.0, seed: int = 0):
        if not 0.0 <= false_negative <= 1.0:
            raise ValueError("false_negative must lie in [0, 1]")
        self.false_negative = false_negative
        self.seed = seed

    def _missed(self, semantic: SemanticScan, view_index: int) -> bool:
        if self.false_negative <= 0.0:
            return False
        key = f"{self.seed}:{view_index}:{semantic.stamp!r}".encode()
        u = int.from_bytes(hashlib.sha256(key).digest()[:8], "big") / 2.0 ** 64
        return u < self.false_negative

    def detections(self, semantic: SemanticScan, target: str, view_index: int = 0) -> list[Detection]:
        if self._missed(semantic, view_index):
            return []
        return detect(semantic, target)

    def score(self, view: tuple[SemanticScan, DepthScan], target: str, view_index: int) -> ViewScore:
        semantic, depth = view
        dets = self.detections(semantic, target, view_index)
        if dets:
            hit = float(min(semantic.hit_ranges[i] for i, lab in enumerate(semantic.labels)
                            if lab == target and semantic.visible[i]))
            return ViewScore(view_index, 10.0 / (1.0 + hit), dets[0])
        r = depth.ranges[depth.ranges > 0]
        return ViewScore(view_index, float(r.mean()) if r.size else 0.0, None)


def score_views(views: Sequence[tuple[SemanticScan, DepthScan]], target: str,
                scorer: ViewScorer) -> list[ViewScore]:
    return [scorer.score(v, target, k) for k, v in enumerate(views)]


def select_direction(scores: Sequence[ViewScore], excluded: set[int] | frozenset = frozenset()) -> int | None:
    """Index of the best score; ties go to the lowest index. None if all are excluded."""
    best, best_v = None, -math.inf
    for s in scores:
        if s.view_index in excluded:
            continue
        if s.value > best_v:
            best, best_v = s.view_index, s.value
    return best


def project_short_term_goal(pose: Pose2D, k: int, offset: float = GOAL_OFFSET,
                            grid: OccupancyGrid | None = None,
                            blocked: np.ndarray | None = None) -> tuple[float, float]:
    """Point ``offset`` meters along view ``k``; pulled back to free space if a grid is given."""
    heading = pose.heading + k * VIEW_STEP_DEG
    if grid is not None and blocked is not None:
        return clip_goal_along_ray(blocked, grid, pose.xy, heading, offset)
    th = math.radians(heading)
    return (pose.x + offset * math.cos(th), pose.y + offset * math.sin(th))


@dataclass
class PanoramaNode:
    node_id: int
    pose: Pose2D
    views: list[tuple[SemanticScan, DepthScan]] = field(default_factory=list)


# ---------------------------------------------------------------------------
# policies


class RandomPolicy:
    """Uniform over forward / left / right with a small STOP probability.

    Each action is a pure function of (seed, step); observations are ignored.
    """

    name = "random"

    def __init__(self, seed: int = 0, stop_prob: float = 0.02):
        self.seed = seed
        self.stop_prob = stop_prob
        self.phase = "random"

    def reset(self, target: str) -> None:
        pass

    def action_at(self, step: int) -> DiscreteAction:
        rng = np.random.default_rng([self.seed, step])
        if rng.random() < self.stop_prob:
            return DiscreteAction.stop()
        k = int(rng.integers(3))
        return (DiscreteAction.forward(STEP_M), DiscreteAction.left(VIEW_STEP_DEG),
                DiscreteAction.right(VIEW_STEP_DEG))[k]

    def act(self, obs: Observation) -> DiscreteAction:
        return self.action_at(obs.step)


class ExternalPolicy:
    """Wraps a callable ``fn(observation) -> token``; tokens use the extended action set."""

    name = "external"

    def __init__(self, fn: Callable[[Observation], object], name: str | None = None):
        self.fn = fn
        self.phase = "external"
        if name:
            self.name = name

    @classmethod
    def load(cls, spec: str) -> "ExternalPolicy":
        """Load ``package.module:callable``; a class is instantiated with no arguments."""
        if ":" not in spec:
            raise PolicyError(f"external policy must look like module:callable, got {spec!r}")
        mod_name, attr = spec.split(":", 1)
        try:
            obj = getattr(importlib.import_module(mod_name), attr)
        except (ImportError, AttributeError) as exc:
            raise PolicyError(f"cannot load external policy {spec!r}: {exc}") from exc
        if isinstance(obj, type):
            obj = obj()
        return cls(obj, name=f"external:{spec}")

    def reset(self, target: str) -> None:
        reset = getattr(self.fn, "reset", None)
        if callable(reset):
            reset(target)

    def act(self, obs: Observation) -> DiscreteAction:
        fn = getattr(self.fn, "act", self.fn)
        return remap_action(fn(obs))


_ORACLE_FIELDS: dict[tuple[str, str, float], tuple[DistanceField, np.ndarray]] = {}


class OraclePolicy:
    """Ground-truth planner: follows the fast-marching field of the true map.

    Every candidate heading (multiples of 30 degrees) is scored by the field
    value one step ahead; the robot turns toward the best collision-free
    heading and steps forward once aligned. STOP when within ``stop_distance``.
    """

    name = "oracle"

    def __init__(self, world: WorldMap, pose_source: Callable[[], Pose2D],
                 stop_distance: float = 0.9, goal_band: float = 0.8,
                 inflation: float = 0.23, clearance: float = 0.21):
        self.world = world
        self.pose_source = pose_source
        self.stop_distance = stop_distance
        self.goal_band = goal_band
        self.inflation = inflation
        self.clearance = clearance
        self.target: str | None = None
        self.field: DistanceField | None = None
        self.phase = "oracle"

    def _field(self, target: str) -> DistanceField:
        key = (self.world.digest or str(id(self.world)), target, self.inflation)
        if key not in _ORACLE_FIELDS:
            w = self.world
            grid = OccupancyGrid.from_bool(w.occupancy_with_objects(), w.resolution)
            ny, nx = grid.shape
            ys = (np.arange(ny) + 0.5) * w.resolution
            xs = (np.arange(nx) + 0.5) * w.resolution
            yy, xx = np.meshgrid(ys, xs, indexing="ij")
            mask = np.zeros(grid.shape, bool)
            for o in w.objects:
                if o.category == target:
                    mask |= np.hypot(xx - o.x, yy - o.y) <= self.goal_band
            try:
                field = fast_marching(grid, goal_mask=mask, inflation=self.inflation)
            except PlanningError as exc:
                raise PolicyError(f"target {target!r} is unreachable: {exc}") from exc
            _ORACLE_FIELDS[key] = (field, mask)
        return _ORACLE_FIELDS[key][0]

    def reset(self, target: str) -> None:
        self.target = target
        self.field = self._field(target)

    def _free_step(self, pose: Pose2D, heading: float) -> bool:
        th = math.radians(heading)
        for t in (0.05, 0.1, 0.15, 0.2, 0.25):
            p = (pose.x + t * math.cos(th), pose.y + t * math.sin(th))
            if check_collision(self.world, p, self.clearance):
                return False
        return True

    def act(self, obs: Observation) -> DiscreteAction:
        pose = self.pose_source()
        if distance_to_object(self.world, pose, self.target) < self.stop_distance:
            return DiscreteAction.stop()
        candidates = []
        for k in range(12):
            heading = pose.heading + k * VIEW_STEP_DEG
            th = math.radians(heading)
            v = self.field.value_at(pose.x + STEP_M * math.cos(th), pose.y + STEP_M * math.sin(th))
            if math.isfinite(v) and self._free_step(pose, heading):
                # prefer small turns on ties
                candidates.append((v, min(k, 12 - k), k))
        best_k, best_v = (None, math.inf)
        if candidates:
            best_v, _, best_k = min(candidates)
        if best_k is None or not math.isfinite(best_v):
            # no usable field step: head straight for the nearest instance
            obj = min((o for o in self.world.objects if o.category == self.target),
                      key=lambda o: math.hypot(o.x - pose.x, o.y - pose.y))
            bearing = math.degrees(math.atan2(obj.y - pose.y, obj.x - pose.x))
            k = int(round(((bearing - pose.heading + 180.0) % 360.0 - 180.0) / VIEW_STEP_DEG))
            if k == 0:
                return DiscreteAction.forward(STEP_M)
            return DiscreteAction.left(VIEW_STEP_DEG) if k > 0 else DiscreteAction.right(VIEW_STEP_DEG)
        if best_k == 0:
            return DiscreteAction.forward(STEP_M)
        return DiscreteAction.left(VIEW_STEP_DEG) if best_k <= 6 else DiscreteAction.right(VIEW_STEP_DEG)


@dataclass(frozen=True)
class VlvConfig:
    goal_offset: float = GOAL_OFFSET
    stop_distance: float = 1.0
    approach_standoff: float = 0.7
    arrival_tolerance: float = 0.25
    leg_action_cap: int = 16
    visited_radius: float = 1.0
    min_goal_distance: float = 0.5
    min_explore_distance: float = 1.0
    map_size: float = 30.0
    resolution: float = 0.05
    inflation: float = 0.23
    window_margin: float = 2.0
    transit_stop: bool = True
    transit_seek: bool = True
    min_frontier_cells: int = 10


@dataclass
class _Leg:
    goal: tuple[float, float]
    view_index: int
    dfield: DistanceField | None = None
    window: tuple[int, int, int, int] = (0, 0, 0, 0)
    path: list[tuple[float, float]] = field(default_factory=list)
    actions: int = 0
    last_intended: DiscreteAction | None = None


class VlvPolicy:
    """Modular policy: panorama at each node, pick a direction, drive 1.5 m, repeat.

    All geometry lives in the episode frame given by the GPS/compass readings.
    Phases: ``panorama`` (12 left turns while views are recorded), ``transit``
    (planner-driven actions toward the short-term goal) and ``done``.
    """

    name = "vlv"

    def __init__(self, scorer: ViewScorer | None = None, config: VlvConfig | None = None):
        self.scorer = scorer or HeuristicScorer()
        self.config = config or VlvConfig()
        self.reset("chair")

    def reset(self, target: str) -> None:
        c = self.config
        n = int(round(c.map_size / c.resolution))
        self.target = target
        self.grid = OccupancyGrid.empty((n, n), c.resolution, (-c.map_size / 2, -c.map_size / 2))
        self.phase = "panorama"
        self.nodes: list[PanoramaNode] = []
        self.node: PanoramaNode | None = None
        self.leg: _Leg | None = None
        self.failed = False
        self.last_scores: list[ViewScore] = []

    # -- helpers ----------------------------------------------------------
    def _window(self, a: tuple[float, float], b: tuple[float, float]) -> tuple[int, int, int, int]:
        m = self.config.window_margin
        g = self.grid
        iy0, ix0 = g.cell_of(min(a[0], b[0]) - m, min(a[1], b[1]) - m)
        iy1, ix1 = g.cell_of(max(a[0], b[0]) + m, max(a[1], b[1]) + m)
        ny, nx = g.shape
        return max(iy0, 0), min(iy1 + 1, ny), max(ix0, 0), min(ix1 + 1, nx)

    def _subgrid(self, win: tuple[int, int, int, int]) -> OccupancyGrid:
        iy0, iy1, ix0, ix1 = win
        g = self.grid
        return OccupancyGrid(g.cells[iy0:iy1, ix0:ix1],
                             g.resolution, (g.origin[0] + ix0 * g.resolution, g.origin[1] + iy0 * g.resolution))

    def _blocked(self, sub: OccupancyGrid, start: tuple[float, float]) -> np.ndarray:
        blocked = sub.inflated(self.config.inflation)
        # let the robot plan out of an inflated zone it already stands in
        iy, ix = sub.cell_of(*start)
        r = int(math.ceil(self.config.inflation / sub.resolution))
        ny, nx = blocked.shape
        yy, xx = np.ogrid[max(iy - r, 0):min(iy + r + 1, ny), max(ix - r, 0):min(ix + r + 1, nx)]
        disc = (yy - iy) ** 2 + (xx - ix) ** 2 <= r * r
        sub_occ = sub.cells[max(iy - r, 0):min(iy + r + 1, ny), max(ix - r, 0):min(ix + r + 1, nx)] == OCCUPIED
        blocked[max(iy - r, 0):min(iy + r + 1, ny), max(ix - r, 0):min(ix + r + 1, nx)][disc & ~sub_occ] = False
        return blocked

    def _plan(self, goal: tuple[float, float], start: tuple[float, float]) -> tuple[DistanceField, tuple] | None:
        win = self._window(goal, start)
        sub = self._subgrid(win)
        blocked = self._blocked(sub, start)
        gy, gx = sub.cell_of(*goal)
        if not sub.in_bounds(gy, gx) or blocked[gy, gx]:
            return None
        try:
            fld = fast_marching(sub, goal, stop_at=start, blocked=blocked)
        except PlanningError:
            return None
        if not math.isfinite(fld.value_at(*start)):
            return None
        return fld, win

    def _best_detection(self, scores: Sequence[ViewScore]) -> tuple[Detection, int] | None:
        dets = [(s.detection, s.view_index) for s in scores if s.detection is not None]
        if not dets:
            return None
        return min(dets, key=lambda d: (d[0].clipped, d[0].distance, d[1]))

    # -- state machine ----------------------------------------------------
    def act(self, obs: Observation) -> DiscreteAction:
        pose = Pose2D(obs.gps[0], obs.gps[1], obs.compass)
        self.grid.integrate(obs.depth, pose)
        if self.phase == "transit":
            return self._transit(obs, pose)
        if self.phase == "panorama":
            return self._panorama(obs, pose)
        return DiscreteAction.stop()

    def _open_node(self, obs: Observation, pose: Pose2D) -> DiscreteAction:
        self.leg = None
        self.node = None
        self.phase = "panorama"
        return self._panorama(obs, pose)

    def _panorama(self, obs: Observation, pose: Pose2D) -> DiscreteAction:
        if self.node is None:
            self.node = PanoramaNode(len(self.nodes), pose)
            self.nodes.append(self.node)
        if len(self.node.views) < N_VIEWS:
            self.node.views.append((obs.semantic, obs.depth))
            return DiscreteAction.left(VIEW_STEP_DEG)
        return self._decide(obs, pose)

    def _decide(self, obs: Observation, pose: Pose2D) -> DiscreteAction:
        c = self.config
        node = self.node
        scores = score_views(node.views, self.target, self.scorer)
        self.last_scores = scores
        best = self._best_detection(scores)
        if best is not None and best[0].distance < c.stop_distance:
            self.phase = "done"
            return DiscreteAction.stop()

        visited = [n.pose.xy for n in self.nodes if n is not node]
        gains = self.frontier_gain(node.pose)
        deferred: list[tuple[tuple[float, float], int]] = []
        # once the target is seen, views without it are only a fallback
        seen = {s.view_index for s in scores if s.detection is not None}
        excluded: set[int] = set(range(N_VIEWS)) - seen if seen else set()
        while True:
            if seen and len(excluded) == N_VIEWS:
                seen = set()
                excluded = {s.view_index for s in scores if s.detection is not None}
            k = select_direction(scores, excluded)
            if k is None:
                break
            excluded.add(k)
            det = scores[k].detection
            heading = node.pose.heading + k * VIEW_STEP_DEG
            if det is not None:
                goal = self._approach_goal(pose, heading + det.bearing, det.distance)
            else:
                goal = self._ray_goal(pose, heading, c.goal_offset, c.min_explore_distance)
            if goal is None:
                continue
            if det is None and (any(math.dist(goal, v) < c.visited_radius for v in visited)
                                or gains[k] < c.min_frontier_cells):
                deferred.append((goal, k))
                continue
            if self._commit(goal, k, pose):
                return self._transit(obs, pose)
        for goal, k in deferred:
            if self._commit(goal, k, pose):
                return self._transit(obs, pose)
        self.failed = True
        self.phase = "done"
        return DiscreteAction.stop()

    def frontier_gain(self, pose: Pose2D, radius: float = 6.0) -> np.ndarray:
        """Frontier cells (free, touching unknown) per 30-degree sector around ``pose``."""
        g = self.grid
        iy0, iy1, ix0, ix1 = self._window((pose.x - radius, pose.y - radius),
                                          (pose.x + radius, pose.y + radius))
        cells = g.cells[iy0:iy1, ix0:ix1]
        unknown = cells == UNKNOWN
        near_unknown = np.zeros_like(unknown)
        near_unknown[1:, :] |= unknown[:-1, :]
        near_unknown[:-1, :] |= unknown[1:, :]
        near_unknown[:, 1:] |= unknown[:, :-1]
        near_unknown[:, :-1] |= unknown[:, 1:]
        ys, xs = np.nonzero((cells == FREE) & near_unknown)
        gains = np.zeros(N_VIEWS)
        if ys.size == 0:
            return gains
        cx = g.origin[0] + (xs + ix0 + 0.5) * g.resolution - pose.x
        cy = g.origin[1] + (ys + iy0 + 0.5) * g.resolution - pose.y
        rel = (np.degrees(np.arctan2(cy, cx)) - pose.heading) % 360.0
        sector = np.round(rel / VIEW_STEP_DEG).astype(int) % N_VIEWS
        keep = np.hypot(cx, cy) <= radius
        np.add.at(gains, sector[keep], 1.0)
        return gains

    def _ray_goal(self, pose: Pose2D, heading: float, dist: float,
                  min_dist: float | None = None) -> tuple[float, float] | None:
        """Goal ``dist`` along ``heading``, pulled back out of inflated obstacles."""
        win = self._window((pose.x - dist, pose.y - dist), (pose.x + dist, pose.y + dist))
        sub = self._subgrid(win)
        goal = clip_goal_along_ray(self._blocked(sub, pose.xy), sub, pose.xy, heading, dist)
        floor = self.config.min_goal_distance if min_dist is None else min_dist
        if math.dist(goal, pose.xy) < min(floor, dist - 1e-9):
            return None
        return goal

    def _approach_goal(self, pose: Pose2D, heading: float, distance: float) -> tuple[float, float] | None:
        """Short-term goal toward a detected object, stopping short of it."""
        c = self.config
        dist = min(max(distance - c.approach_standoff, c.arrival_tolerance + 0.05), c.goal_offset)
        return self._ray_goal(pose, heading, dist)

    def _commit(self, goal: tuple[float, float], k: int, pose: Pose2D) -> bool:
        plan = self._plan(goal, pose.xy)
        if plan is None:
            return False
        self.leg = _Leg(goal, k, plan[0], plan[1])
        self.phase = "transit"
        return True

    def _transit(self, obs: Observation, pose: Pose2D) -> DiscreteAction:
        c = self.config
        leg = self.leg
        if c.transit_stop or c.transit_seek:
            dets = self.scorer.detections(obs.semantic, self.target, 0) \
                if hasattr(self.scorer, "detections") else detect(obs.semantic, self.target)
            best = dets[0] if dets and not dets[0].clipped else None
            if best is not None and c.transit_stop and best.distance < c.stop_distance:
                self.phase = "done"
                return DiscreteAction.stop()
            if best is not None and c.transit_seek:
                goal = self._approach_goal(pose, pose.heading + best.bearing, best.distance)
                if goal is not None and math.dist(goal, leg.goal) > 0.2:
                    leg.goal = goal
                    leg.dfield = None
        if leg.actions >= c.leg_action_cap or math.dist(pose.xy, leg.goal) < c.arrival_tolerance:
            return self._open_node(obs, pose)
        # replan when the guard overrode the last step or the map changed under the path
        replan = leg.dfield is None or (leg.last_intended is not None and obs.last_action != leg.last_intended)
        if not replan and leg.path:
            replan = self._path_blocked(leg)
        if replan:
            plan = self._plan(leg.goal, pose.xy)
            if plan is None:
                return self._open_node(obs, pose)
            leg.dfield, leg.window = plan
        try:
            leg.path = extract_path(leg.dfield, pose.xy)
        except PlanningError:
            plan = self._plan(leg.goal, pose.xy)
            if plan is None:
                return self._open_node(obs, pose)
            leg.dfield, leg.window = plan
            try:
                leg.path = extract_path(leg.dfield, pose.xy)
            except PlanningError:
                return self._open_node(obs, pose)
        action = first_action(leg.path + [leg.goal], pose, STEP_M, VIEW_STEP_DEG, c.arrival_tolerance)
        if action is None:
            return self._open_node(obs, pose)
        leg.actions += 1
        leg.last_intended = action
        return action

    def _path_blocked(self, leg: _Leg) -> bool:
        sub = self._subgrid(leg.window)
        blocked = self._blocked(sub, leg.path[0])
        for x, y in leg.path[1:]:
            iy, ix = sub.cell_of(x, y)
            if not sub.in_bounds(iy, ix) or blocked[iy, ix]:
                return True
        return False
