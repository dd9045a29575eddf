"""camera_api node: renders paired semantic ("color") and depth scans at a fixed rate."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .bus import Bus
from .messages import DepthScan, Pose2D, SemanticScan
from .scheduler import SimClock
from .sim_world import InvalidPose, NoiseModel, RayHits, WorldMap, apply_depth_noise, raycast

COLOR = "/camera/color"
DEPTH = "/camera/depth"
STATUS = "/camera/status"


@dataclass(frozen=True)
class CameraConfig:
    fov: float = 90.0
    n_rays: int = 180
    max_range: float = 5.0
    rate_hz: float = 5.0

    def __post_init__(self):
        if self.n_rays < 1:
            raise ValueError("n_rays must be >= 1")
        if not 0 < self.fov <= 360:
            raise ValueError("fov must lie in (0, 360]")
        if not self.max_range > 0:
            raise ValueError("max_range must be positive")
        if not self.rate_hz > 0:
            raise ValueError("rate must be positive")


@dataclass(frozen=True)
class CaptureError:
    message: str
    stamp: float


class CameraNode:
    name = "camera_api"

    def __init__(self, bus: Bus, clock: SimClock, world: WorldMap,
                 pose_source: Callable[[float], Pose2D], noise: NoiseModel | None = None,
                 rng: np.random.Generator | None = None, config: CameraConfig | None = None):
        self.bus = bus
        self.clock = clock
        self.world = world
        self.pose_source = pose_source
        self.noise = noise or NoiseModel()
        self.rng = rng if rng is not None else np.random.default_rng(self.noise.rng_seed + 1)
        self.config = config or CameraConfig()
        self.color_pub = bus.advertise(COLOR, node=self.name)
        self.depth_pub = bus.advertise(DEPTH, node=self.name)
        self.status_pub = bus.advertise(STATUS, node=self.name)
        self.captures = 0
        self._cache: tuple[tuple, RayHits] | None = None
        self._task = None
        self.set_rate(self.config.rate_hz)

    def set_rate(self, hz: float) -> None:
        if not hz > 0:
            raise ValueError("camera rate must be positive")
        if self._task is not None:
            self._task.cancel()
        self.rate = hz
        self._task = self.clock.every(1.0 / hz, self._on_tick, phase=self.clock.now,
                                      name="camera_api.capture")

    def _on_tick(self, t: float) -> None:
        try:
            self.capture(t)
        except InvalidPose as exc:
            self.status_pub.publish(CaptureError(str(exc), t), stamp=t)

    def _hits(self, pose: Pose2D) -> RayHits:
        c = self.config
        key = (pose.x, pose.y, pose.heading, c.fov, c.n_rays, c.max_range)
        if self._cache is not None and self._cache[0] == key:
            return self._cache[1]
        hits = raycast(self.world, pose, c.fov, c.n_rays, c.max_range)
        self._cache = (key, hits)
        return hits

    def capture(self, t: float | None = None) -> tuple[SemanticScan, DepthScan]:
        """Render both scans at one pose and stamp, publish them, and return them."""
        t = self.clock.now if t is None else t
        pose = self.pose_source(t)
        c = self.config
        hits = self._hits(pose)
        ranges, _, _ = apply_depth_noise(hits.distances, c.max_range, self.noise, self.rng)
        depth = DepthScan(ranges=ranges, fov=c.fov, stamp=t, pose_hint=pose, max_range=c.max_range)
        semantic = SemanticScan(labels=hits.labels, hit_ranges=hits.distances.copy(),
                                visible=hits.object_index >= 0, fov=c.fov, stamp=t,
                                pose_hint=pose, max_range=c.max_range)
        self.captures += 1
        self.color_pub.publish(semantic, stamp=t)
        self.depth_pub.publish(depth, stamp=t)
        return semantic, depth

    def shutdown(self) -> None:
        if self._task is not None:
            self._task.cancel()
