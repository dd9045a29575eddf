"""Deterministic 2D world: floor plan, objects, unicycle plant and raycast sensors.

Frame conventions: world x to the right, y up, headings in degrees
counter-clockwise from +x. Cell (iy, ix) covers the half-open square
[ix*res, (ix+1)*res) x [iy*res, (iy+1)*res). In the world file the first grid
row is the top (largest y) so the file reads like a floor plan.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np
from scipy import ndimage

from .messages import DepthScan, Pose2D, SemanticScan, Twist, ray_offsets

CATEGORIES = ("chair", "sofa", "table", "bed", "toilet", "monitor", "plant")
WALL = "wall"
NONE = "none"
DEFAULT_RESOLUTION = 0.05
DEFAULT_ROBOT_RADIUS = 0.18


class WorldError(ValueError):
    pass


class InvalidPose(WorldError):
    pass


@dataclass(frozen=True)
class ObjectInstance:
    category: str
    x: float
    y: float
    radius: float

    def __post_init__(self):
        if self.category not in CATEGORIES:
            raise WorldError(f"unknown object category {self.category!r}")
        if not self.radius > 0:
            raise WorldError(f"object {self.category} at ({self.x}, {self.y}) needs a positive radius")

    @property
    def centroid(self) -> tuple[float, float]:
        return (self.x, self.y)

    def to_dict(self) -> dict:
        return {"category": self.category, "x": self.x, "y": self.y, "radius": self.radius}


@dataclass(frozen=True, eq=False)
class WorldMap:
    resolution: float
    occupied: np.ndarray  # bool [iy, ix], iy = 0 at y = 0
    objects: tuple[ObjectInstance, ...]
    starts: tuple[Pose2D, ...]
    name: str = "world"
    robot_radius: float = DEFAULT_ROBOT_RADIUS
    digest: str = ""

    @property
    def shape(self) -> tuple[int, int]:
        return self.occupied.shape

    @property
    def width(self) -> float:
        return self.occupied.shape[1] * self.resolution

    @property
    def height(self) -> float:
        return self.occupied.shape[0] * self.resolution

    @property
    def categories(self) -> tuple[str, ...]:
        present = {o.category for o in self.objects}
        return tuple(c for c in CATEGORIES if c in present)

    def cell_of(self, x: float, y: float) -> tuple[int, int]:
        return (math.floor(y / self.resolution), math.floor(x / self.resolution))

    def in_bounds(self, iy: int, ix: int) -> bool:
        return 0 <= iy < self.occupied.shape[0] and 0 <= ix < self.occupied.shape[1]

    def is_occupied_cell(self, iy: int, ix: int) -> bool:
        return not self.in_bounds(iy, ix) or bool(self.occupied[iy, ix])

    @cached_property
    def clearance(self) -> np.ndarray:
        """Center-to-center distance (m) from each cell to the nearest occupied cell."""
        return ndimage.distance_transform_edt(~self.occupied) * self.resolution

    def _dilated(self, radius: float) -> np.ndarray:
        """Cells within radius (plus one cell diagonal) of an occupied cell or the map border."""
        cache = self.__dict__.setdefault("_dilation_cache", {})
        if radius not in cache:
            mask = self.clearance <= radius + self.resolution * math.sqrt(2.0)
            # points beyond the border count as occupied
            k = int(math.ceil(radius / self.resolution)) + 1
            mask[:k, :] = True
            mask[-k:, :] = True
            mask[:, :k] = True
            mask[:, -k:] = True
            cache[radius] = mask
        return cache[radius]

    @cached_property
    def _object_arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        if not self.objects:
            return np.zeros((0, 2)), np.zeros(0), np.zeros(0, dtype=int)
        c = np.array([o.centroid for o in self.objects], dtype=float)
        r = np.array([o.radius for o in self.objects], dtype=float)
        return c, r, np.arange(len(self.objects))

    def occupancy_with_objects(self) -> np.ndarray:
        """Walls plus rasterized object footprints (cells whose center lies in a footprint)."""
        occ = self.occupied.copy()
        res = self.resolution
        ys = (np.arange(occ.shape[0]) + 0.5) * res
        xs = (np.arange(occ.shape[1]) + 0.5) * res
        for o in self.objects:
            iy0 = max(0, int((o.y - o.radius) / res) - 1)
            iy1 = min(occ.shape[0], int((o.y + o.radius) / res) + 2)
            ix0 = max(0, int((o.x - o.radius) / res) - 1)
            ix1 = min(occ.shape[1], int((o.x + o.radius) / res) + 2)
            yy, xx = np.meshgrid(ys[iy0:iy1], xs[ix0:ix1], indexing="ij")
            occ[iy0:iy1, ix0:ix1] |= (xx - o.x) ** 2 + (yy - o.y) ** 2 <= o.radius ** 2
        return occ

    def to_dict(self) -> dict:
        rows = ["".join("#" if c else "." for c in row) for row in self.occupied[::-1]]
        return {
            "name": self.name,
            "resolution": self.resolution,
            "robot_radius": self.robot_radius,
            "grid": rows,
            "objects": [o.to_dict() for o in self.objects],
            "starts": [s.to_dict() for s in self.starts],
        }


# ---------------------------------------------------------------------------
# loading and validation


def world_from_dict(data: dict, name: str | None = None) -> WorldMap:
    try:
        res = float(data["resolution"])
        rows = data["grid"]
    except (KeyError, TypeError, ValueError) as exc:
        raise WorldError(f"world is missing a required field: {exc}") from exc
    if not res > 0:
        raise WorldError("resolution must be positive")
    if not rows or any(len(r) != len(rows[0]) for r in rows):
        raise WorldError("grid rows must be non-empty and of equal length")
    bad = {ch for r in rows for ch in r} - {".", "#"}
    if bad:
        raise WorldError(f"grid contains unexpected characters {sorted(bad)}")
    occ = np.array([[ch == "#" for ch in r] for r in rows[::-1]], dtype=bool)
    if not (occ[0].all() and occ[-1].all() and occ[:, 0].all() and occ[:, -1].all()):
        raise WorldError("grid boundary cells must all be occupied (closed world)")

    objects = []
    for i, od in enumerate(data.get("objects", [])):
        try:
            obj = ObjectInstance(str(od["category"]), float(od["x"]), float(od["y"]),
                                 float(od.get("radius", 0.25)))
        except KeyError as exc:
            raise WorldError(f"object #{i} is missing field {exc}") from exc
        objects.append(obj)

    starts = []
    for sd in data.get("starts", []):
        starts.append(Pose2D(float(sd["x"]), float(sd["y"]), float(sd.get("heading", 0.0))))
    if len(starts) < 1:
        raise WorldError("world needs at least one start pose")

    world = WorldMap(
        resolution=res,
        occupied=occ,
        objects=tuple(objects),
        starts=tuple(starts),
        name=name or str(data.get("name", "world")),
        robot_radius=float(data.get("robot_radius", DEFAULT_ROBOT_RADIUS)),
        digest=hashlib.sha256(json.dumps(data, sort_keys=True).encode()).hexdigest()[:16],
    )
    validate_world(world)
    return world


def validate_world(world: WorldMap) -> None:
    for i, obj in enumerate(world.objects):
        iy, ix = world.cell_of(obj.x, obj.y)
        if world.is_occupied_cell(iy, ix):
            raise WorldError(
                f"object #{i} ({obj.category} at ({obj.x:.2f}, {obj.y:.2f})) lies in an occupied cell")
    for i, s in enumerate(world.starts):
        if check_collision(world, s, world.robot_radius):
            raise WorldError(
                f"start #{i + 1} at ({s.x:.2f}, {s.y:.2f}) lacks {world.robot_radius} m clearance")


def load_world(path: str | Path) -> WorldMap:
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise
    except (OSError, json.JSONDecodeError) as exc:
        raise WorldError(f"cannot parse world file {path}: {exc}") from exc
    return world_from_dict(data, name=data.get("name", path.stem))


def bundled_world_path(name: str = "apartment") -> Path:
    return Path(__file__).parent / "data" / f"{name}.json"


# ---------------------------------------------------------------------------
# collision


def check_collision(world: WorldMap, pose: Pose2D | tuple[float, float], radius: float) -> bool:
    """True iff the disc at ``pose`` intersects an occupied cell or an object footprint."""
    x, y = (pose.x, pose.y) if isinstance(pose, Pose2D) else pose
    res = world.resolution
    iy, ix = world.cell_of(x, y)
    if world.is_occupied_cell(iy, ix):
        return True

    centers, radii, _ = world._object_arrays
    if len(radii):
        d2 = (centers[:, 0] - x) ** 2 + (centers[:, 1] - y) ** 2
        if np.any(d2 < (radii + radius) ** 2):
            return True

    if radius <= 0:
        return False
    if world.clearance[iy, ix] - res * math.sqrt(2.0) >= radius:
        return False
    # exact disc/square test over the cells that the disc's bounding box touches
    iy0, iy1 = math.floor((y - radius) / res), math.floor((y + radius) / res)
    ix0, ix1 = math.floor((x - radius) / res), math.floor((x + radius) / res)
    ny, nx = world.occupied.shape
    # the boundary ring is occupied, so clipping the box to the map loses nothing
    cy0, cy1, cx0, cx1 = max(iy0, 0), min(iy1, ny - 1), max(ix0, 0), min(ix1, nx - 1)
    block = world.occupied[cy0:cy1 + 1, cx0:cx1 + 1]
    if not block.any():
        return False
    ys, xs = np.nonzero(block)
    ys = ys + cy0
    xs = xs + cx0
    dx = np.maximum(np.maximum(xs * res - x, 0.0), x - (xs + 1) * res)
    dy = np.maximum(np.maximum(ys * res - y, 0.0), y - (ys + 1) * res)
    return bool(np.any(dx * dx + dy * dy < radius * radius))


def distance_to_object(world: WorldMap, pose: Pose2D | tuple[float, float], category: str) -> float:
    """Euclidean distance from the pose position to the nearest centroid of ``category``."""
    x, y = (pose.x, pose.y) if isinstance(pose, Pose2D) else pose
    ds = [math.hypot(o.x - x, o.y - y) for o in world.objects if o.category == category]
    if not ds:
        raise WorldError(f"category {category!r} is not present in world {world.name!r}")
    return min(ds)


# ---------------------------------------------------------------------------
# plant


@dataclass(frozen=True)
class NoiseModel:
    odom_xy_sigma: float = 0.0
    odom_heading_sigma: float = 0.0  # degrees
    actuation_scale_sigma: float = 0.0
    depth_gaussian_sigma: float = 0.0
    depth_impulse_prob: float = 0.0
    depth_dropout_prob: float = 0.0
    rng_seed: int = 0

    def __post_init__(self):
        for name in ("odom_xy_sigma", "odom_heading_sigma", "actuation_scale_sigma",
                     "depth_gaussian_sigma"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        for name in ("depth_impulse_prob", "depth_dropout_prob"):
            p = getattr(self, name)
            if not 0.0 <= p < 1.0:
                raise ValueError(f"{name} must lie in [0, 1)")

    @classmethod
    def zero(cls, seed: int = 0) -> "NoiseModel":
        return cls(rng_seed=seed)

    @classmethod
    def default(cls, seed: int = 0) -> "NoiseModel":
        """Mild noise used by suites: every pathology present, none dominant."""
        return cls(odom_xy_sigma=0.001, odom_heading_sigma=0.02, actuation_scale_sigma=0.02,
                   depth_gaussian_sigma=0.01, depth_impulse_prob=0.01,
                   depth_dropout_prob=0.01, rng_seed=seed)

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass(frozen=True)
class RobotState:
    pose: Pose2D
    v: float = 0.0
    w: float = 0.0
    radius: float = DEFAULT_ROBOT_RADIUS
    collision: bool = False


def _integrate(x: float, y: float, th: float, v: float, w: float, dt: float):
    """Exact unicycle motion for constant (v, w); th in radians."""
    if abs(w) < 1e-12:
        return x + v * dt * math.cos(th), y + v * dt * math.sin(th), th
    th1 = th + w * dt
    r = v / w
    return x + r * (math.sin(th1) - math.sin(th)), y - r * (math.cos(th1) - math.cos(th)), th1


_SWEEP_STEP = 0.02  # m between collision probes along a motion


def step(state: RobotState, cmd: Twist, dt: float, noise: NoiseModel | None = None,
         world: WorldMap | None = None, rng: np.random.Generator | None = None) -> RobotState:
    """Advance the plant by ``dt`` seconds under ``cmd``.

    Actuation noise scales v and w multiplicatively. When ``world`` is given the
    swept disc is probed along the path; on contact the robot stops at the last
    collision-free pose and the returned state carries ``collision=True``.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    v, w = cmd.v, cmd.w
    if noise is not None and noise.actuation_scale_sigma > 0 and (v or w):
        if rng is None:
            raise ValueError("an rng is required when actuation noise is enabled")
        sv, sw = rng.normal(0.0, noise.actuation_scale_sigma, 2)
        v, w = v * (1.0 + float(sv)), w * (1.0 + float(sw))

    p = state.pose
    th = math.radians(p.heading)
    x1, y1, th1 = _integrate(p.x, p.y, th, v, w, dt)
    if world is None or v == 0.0:
        # rotation in place cannot change the disc footprint
        return RobotState(Pose2D(x1, y1, math.degrees(th1)), v, w, state.radius, False)

    n = max(1, math.ceil(abs(v) * dt / _SWEEP_STEP))
    last_free = 0.0
    for k in range(1, n + 1):
        s = k / n
        xs, ys, _ = _integrate(p.x, p.y, th, v, w, dt * s)
        if check_collision(world, (xs, ys), state.radius):
            lo, hi = last_free, s
            for _ in range(12):
                mid = 0.5 * (lo + hi)
                xm, ym, _ = _integrate(p.x, p.y, th, v, w, dt * mid)
                if check_collision(world, (xm, ym), state.radius):
                    hi = mid
                else:
                    lo = mid
            xc, yc, thc = _integrate(p.x, p.y, th, v, w, dt * lo)
            return RobotState(Pose2D(xc, yc, math.degrees(thc)), 0.0, 0.0, state.radius, True)
        last_free = s
    return RobotState(Pose2D(x1, y1, math.degrees(th1)), v, w, state.radius, False)


# ---------------------------------------------------------------------------
# sensors


@dataclass(frozen=True, eq=False)
class RayHits:
    """Noiseless raycast result shared by the depth and semantic renders."""

    distances: np.ndarray  # clamped to max_range
    labels: tuple[str, ...]
    hit: np.ndarray  # bool, something was hit within max_range
    object_index: np.ndarray  # -1 unless an object was the first hit


def _occupied_at(world: WorldMap, mask: np.ndarray, sx: np.ndarray, sy: np.ndarray) -> np.ndarray:
    res = world.resolution
    ny, nx = mask.shape
    ix = np.floor(sx / res).astype(np.int64)
    iy = np.floor(sy / res).astype(np.int64)
    inside = (ix >= 0) & (ix < nx) & (iy >= 0) & (iy < ny)
    occ = np.ones(sx.shape, dtype=bool)
    occ[inside] = mask[iy[inside], ix[inside]]
    return occ


def _first_occupied_on_segment(world: WorldMap, px: float, py: float, dx: np.ndarray, dy: np.ndarray,
                               lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    """Exact entry distance into the first occupied cell on [lo, hi] per ray (inf if none).

    The segment is cut at every grid-line crossing; each piece lies in one cell,
    looked up at its midpoint.
    """
    res = world.resolution
    k = np.arange(int(math.ceil(float((hi - lo).max()) / res)) + 2)
    cuts = [lo[:, None], hi[:, None]]
    for p, d in ((px, dx), (py, dy)):
        with np.errstate(divide="ignore", invalid="ignore"):
            start = (p + d * lo) / res
            first = np.where(d > 0, np.floor(start) + 1, np.ceil(start) - 1)
            lines = first[:, None] + np.sign(d)[:, None] * k[None, :]
            t = (lines * res - p) / d[:, None]
        cuts.append(np.where(np.abs(d)[:, None] > 1e-15, t, np.inf))
    ts = np.concatenate(cuts, axis=1)
    ts = np.where((ts >= lo[:, None]) & (ts <= hi[:, None]), ts, np.inf)
    ts.sort(axis=1)
    a, b = ts[:, :-1], ts[:, 1:]
    with np.errstate(invalid="ignore"):
        piece = np.isfinite(b) & (b - a > 1e-12)
    mid = np.where(piece, 0.5 * (a + b), 0.0)
    occ = _occupied_at(world, world.occupied, px + dx[:, None] * mid, py + dy[:, None] * mid) & piece
    hit = occ.any(axis=1)
    return np.where(hit, a[np.arange(len(dx)), occ.argmax(axis=1)], np.inf)


def _wall_distances(world: WorldMap, px: float, py: float, dx: np.ndarray, dy: np.ndarray,
                    max_range: float) -> np.ndarray:
    """Distance along each ray to the first occupied cell (inf beyond max_range).

    Coarse-to-fine: samples every H meters are tested against the occupancy
    dilated by H / 2 plus a cell diagonal, so a free coarse sample certifies
    every point within H / 2 of it. Exact cell traversal then runs only on
    short windows starting at the last certified sample.
    """
    res = world.resolution
    H = 4.0 * res
    n_rays = dx.shape[0]
    tc = np.arange(int(math.ceil(max_range / H)) + 2) * H
    occ_c = _occupied_at(world, world._dilated(H / 2.0), px + dx[:, None] * tc[None, :],
                         py + dy[:, None] * tc[None, :])
    any_c = occ_c.any(axis=1)
    lo = np.maximum(occ_c.argmax(axis=1) - 1, 0) * H
    out = np.full(n_rays, np.inf)
    active = np.nonzero(any_c)[0]
    L = 3.0 * H
    while active.size:
        seg_lo = lo[active]
        t = _first_occupied_on_segment(world, px, py, dx[active], dy[active], seg_lo, seg_lo + L)
        found = np.isfinite(t)
        out[active[found]] = t[found]
        lo[active] = seg_lo + L
        active = active[~found & (seg_lo + L <= max_range)]
    return np.where(out <= max_range, out, np.inf)


def raycast(world: WorldMap, pose: Pose2D, fov: float, n_rays: int, max_range: float) -> RayHits:
    if n_rays < 1:
        raise ValueError("n_rays must be >= 1")
    if not 0 < fov <= 360:
        raise ValueError("fov must lie in (0, 360]")
    if check_collision(world, pose, 0.0):
        raise InvalidPose(f"pose ({pose.x:.3f}, {pose.y:.3f}) lies inside an occupied cell or object")

    ang = np.radians(pose.heading + ray_offsets(fov, n_rays))
    dx, dy = np.cos(ang), np.sin(ang)
    px, py = pose.x, pose.y
    t_wall = _wall_distances(world, px, py, dx, dy, max_range)
    rows = np.arange(n_rays)

    # object hits: analytic ray/disc intersection
    centers, radii, _ = world._object_arrays
    t_obj = np.full(n_rays, np.inf)
    obj_idx = np.full(n_rays, -1)
    if len(radii):
        cx = centers[:, 0] - px
        cy = centers[:, 1] - py
        b = dx[:, None] * cx[None, :] + dy[:, None] * cy[None, :]
        c2 = (cx * cx + cy * cy - radii * radii)[None, :]
        disc = b * b - c2
        with np.errstate(invalid="ignore"):
            t = b - np.sqrt(disc)
        t = np.where((disc >= 0) & (t >= 0), t, np.inf)
        obj_idx = np.argmin(t, axis=1)
        t_obj = t[rows, obj_idx]
        obj_idx = np.where(np.isfinite(t_obj), obj_idx, -1)

    t_hit = np.minimum(t_wall, t_obj)
    hit = t_hit <= max_range
    is_obj = hit & (t_obj <= t_wall)
    labels = []
    for r in range(n_rays):
        if not hit[r]:
            labels.append(NONE)
        elif is_obj[r]:
            labels.append(world.objects[obj_idx[r]].category)
        else:
            labels.append(WALL)
    return RayHits(
        distances=np.minimum(t_hit, max_range),
        labels=tuple(labels),
        hit=hit,
        object_index=np.where(is_obj, obj_idx, -1),
    )


def apply_depth_noise(ranges: np.ndarray, max_range: float, noise: NoiseModel,
                      rng: np.random.Generator | None):
    """Return (noisy ranges, impulse mask, dropout mask).

    Gaussian jitter models lighting, impulses (uniform in (0, max_range]) model
    surface noise, and dropouts (0) model incomplete data.
    """
    out = ranges.astype(float).copy()
    n = out.shape[0]
    impulse = np.zeros(n, dtype=bool)
    dropout = np.zeros(n, dtype=bool)
    if noise.depth_gaussian_sigma > 0:
        out = np.clip(out + rng.normal(0.0, noise.depth_gaussian_sigma, n), 1e-6, max_range)
    if noise.depth_impulse_prob > 0:
        impulse = rng.random(n) < noise.depth_impulse_prob
        # 1 - U lies in (0, 1]
        out[impulse] = (1.0 - rng.random(int(impulse.sum()))) * max_range
    if noise.depth_dropout_prob > 0:
        dropout = rng.random(n) < noise.depth_dropout_prob
        out[dropout] = 0.0
    return out, impulse, dropout


def render_depth(world: WorldMap, pose: Pose2D, fov: float, n_rays: int, max_range: float,
                 noise: NoiseModel | None = None, rng: np.random.Generator | None = None,
                 stamp: float = 0.0, hits: RayHits | None = None) -> DepthScan:
    if hits is None:
        hits = raycast(world, pose, fov, n_rays, max_range)
    ranges = hits.distances
    if noise is not None:
        if rng is None:
            rng = np.random.default_rng(noise.rng_seed)
        ranges, _, _ = apply_depth_noise(ranges, max_range, noise, rng)
    else:
        ranges = ranges.copy()
    return DepthScan(ranges=ranges, fov=fov, stamp=stamp, pose_hint=pose, max_range=max_range)


def render_semantic(world: WorldMap, pose: Pose2D, fov: float, n_rays: int, max_range: float,
                    stamp: float = 0.0, hits: RayHits | None = None) -> SemanticScan:
    if hits is None:
        hits = raycast(world, pose, fov, n_rays, max_range)
    return SemanticScan(
        labels=hits.labels,
        hit_ranges=hits.distances.copy(),
        visible=hits.object_index >= 0,
        fov=fov,
        stamp=stamp,
        pose_hint=pose,
        max_range=max_range,
    )

