"""visual_semantic_navigation node: observation assembly and the episode loop.

Each step captures N depth frames while the robot is stationary, fuses them
with a per-ray temporal median, attaches the latest semantic scan and the
episode-relative odometry, asks the policy for an action, applies the
obstacle guard and sends the action to /discrete_move, waiting for its
confirmation before the next step.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Callable, Protocol

import numpy as np

from .bus import Bus, BusError, ServiceTimeout
from .camera_api import COLOR, DEPTH, STATUS
from .config import ConfigError, parse_flat_config
from .discrete_move import SERVICE as MOVE_SERVICE
from .messages import (ActionKind, DepthScan, DiscreteAction, MoveResult, OdomSample, Pose2D,
                       SemanticScan, wrap_deg)
from .robot_api import ODOM, RESET_ODOM
from .sim_world import CATEGORIES

log = logging.getLogger(__name__)

RUNNING = "running"
SUCCESS_CLAIMED = "success_claimed"
LIMIT_REACHED = "limit_reached"
MOVE_FAILED = "move_failed"
COLLISION = "collision"
TERMINAL = (SUCCESS_CLAIMED, LIMIT_REACHED, MOVE_FAILED, COLLISION)


# ---------------------------------------------------------------------------
# preprocessing


def median_filter(frames: list[DepthScan]) -> DepthScan:
    """Per-ray temporal median of N depth scans.

    Dropout readings (0) are ignored whenever a ray has at least one nonzero
    reading; with an even number of valid readings the lower median is used.
    """
    if not frames:
        raise ValueError("median_filter needs at least one frame")
    n_rays, fov = frames[0].n_rays, frames[0].fov
    for f in frames[1:]:
        if f.n_rays != n_rays or f.fov != fov:
            raise ValueError("all frames must share n_rays and fov")
    stack = np.stack([f.ranges for f in frames]).astype(float)
    stack[stack == 0.0] = np.nan
    ordered = np.sort(stack, axis=0)  # NaN sorts last
    valid = np.sum(~np.isnan(stack), axis=0)
    idx = np.maximum(valid - 1, 0) // 2
    out = ordered[idx, np.arange(n_rays)]
    out = np.where(valid > 0, out, 0.0)
    newest = max(frames, key=lambda f: f.stamp)
    return DepthScan(ranges=out, fov=fov, stamp=newest.stamp, pose_hint=newest.pose_hint,
                     max_range=newest.max_range)


def relative_odom(current: OdomSample, start: OdomSample) -> tuple[tuple[float, float], float]:
    """GPS (x, y) and compass (degrees) of ``current`` in the episode-start frame."""
    dx, dy = current.x - start.x, current.y - start.y
    th = math.radians(start.heading)
    c, s = math.cos(th), math.sin(th)
    return (c * dx + s * dy, -s * dx + c * dy), wrap_deg(current.heading - start.heading)


def frontal_min(depth: DepthScan, cone: float) -> float:
    """Smallest nonzero reading within +-cone/2 of the scan center (inf if none)."""
    offsets = depth.ray_angles()
    sel = np.abs(offsets) <= cone / 2.0 + 1e-9
    vals = depth.ranges[sel]
    vals = vals[vals > 0.0]
    return float(vals.min()) if vals.size else math.inf


def obstacle_guard(depth: DepthScan, threshold: float, cone: float) -> bool:
    """True iff something is closer than ``threshold`` straight ahead (zeros ignored)."""
    return frontal_min(depth, cone) < threshold


# ---------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class VsnConfig:
    target: str = "chair"
    median_window: int = 5
    max_steps: int = 150
    obstacle_threshold: float = 0.3
    obstacle_cone: float = 30.0
    guard_turn_deg: float = 30.0

    def __post_init__(self):
        if self.target not in CATEGORIES:
            raise ConfigError(f"unknown target category {self.target!r}; expected one of {CATEGORIES}")
        if self.median_window < 1 or self.median_window % 2 == 0:
            raise ConfigError(f"median_window must be odd and >= 1, got {self.median_window}")
        if self.max_steps < 1:
            raise ConfigError("max_steps must be >= 1")


_VSN_KEYS = {
    "target": ("target", str),
    "median_window": ("median_window", int),
    "max_steps": ("max_steps", int),
    "obstacle_threshold_m": ("obstacle_threshold", float),
    "obstacle_cone_deg": ("obstacle_cone", float),
}


def vsn_config_from_mapping(values: dict[str, str], base: VsnConfig | None = None) -> VsnConfig:
    kwargs: dict[str, Any] = {}
    for key, raw in values.items():
        if key not in _VSN_KEYS:
            raise ConfigError(f"unknown vsn key {key!r}")
        attr, typ = _VSN_KEYS[key]
        try:
            kwargs[attr] = typ(raw)
        except ValueError as exc:
            raise ConfigError(f"vsn.{key}: {raw!r} is not a valid {typ.__name__}") from exc
    return replace(base or VsnConfig(), **kwargs)


def load_vsn_config(path: str | Path | None = None, target: str | None = None) -> VsnConfig:
    """Read the ``vsn`` section; ``target`` (e.g. from the command line) wins over the file."""
    values: dict[str, str] = {}
    if path is not None:
        cfg = parse_flat_config(Path(path).read_text(encoding="utf-8"), default_section="vsn")
        values = cfg.section("vsn")
    if target is not None:
        values["target"] = target
    return vsn_config_from_mapping(values)


# ---------------------------------------------------------------------------
# episode records


@dataclass
class Observation:
    semantic: SemanticScan
    depth: DepthScan
    gps: tuple[float, float]
    compass: float
    last_action: DiscreteAction | None
    step: int
    target: str


@dataclass
class StepRecord:
    intended: DiscreteAction
    executed: DiscreteAction
    result: MoveResult
    guard: bool = False
    frontal_min: float = math.inf
    gps: tuple[float, float] = (0.0, 0.0)
    compass: float = 0.0
    phase: str = ""
    frame_ref: str | None = None
    sim_time: float = 0.0

    def to_dict(self) -> dict:
        return {
            "intended": self.intended.to_dict(),
            "executed": self.executed.to_dict(),
            "result": self.result.to_dict(),
            "guard": self.guard,
            "frontal_min": None if math.isinf(self.frontal_min) else round(self.frontal_min, 6),
            "gps": [round(self.gps[0], 6), round(self.gps[1], 6)],
            "compass": round(self.compass, 6),
            "phase": self.phase,
            "frame_ref": self.frame_ref,
            "sim_time": round(self.sim_time, 6),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "StepRecord":
        fm = d.get("frontal_min")
        return cls(
            intended=DiscreteAction.from_dict(d["intended"]),
            executed=DiscreteAction.from_dict(d["executed"]),
            result=MoveResult.from_dict(d["result"]),
            guard=bool(d.get("guard", False)),
            frontal_min=math.inf if fm is None else float(fm),
            gps=tuple(d.get("gps", (0.0, 0.0))),
            compass=float(d.get("compass", 0.0)),
            phase=d.get("phase", ""),
            frame_ref=d.get("frame_ref"),
            sim_time=float(d.get("sim_time", 0.0)),
        )


@dataclass
class EpisodeLog:
    id: str
    target: str
    start_index: int
    policy: str = ""
    seed: int = 0
    steps: list[StepRecord] = field(default_factory=list)
    status: str = RUNNING
    start_pose: Pose2D | None = None
    final_pose: Pose2D | None = None
    distance_to_target_at_stop: float | None = None
    total_path_length: float = 0.0
    total_sim_time: float = 0.0
    observation_refs: list[str] = field(default_factory=list)
    world: str = ""
    world_digest: str = ""
    message: str = ""
    trajectory: list[tuple[float, float]] = field(default_factory=list)

    @property
    def actions(self) -> list[tuple[DiscreteAction, DiscreteAction, MoveResult]]:
        return [(s.intended, s.executed, s.result) for s in self.steps]

    @property
    def n_actions(self) -> int:
        return len(self.steps)

    def set_status(self, status: str) -> None:
        if self.status != RUNNING:
            raise RuntimeError(f"episode {self.id} already terminated with {self.status}")
        self.status = status

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "target": self.target,
            "start_index": self.start_index,
            "policy": self.policy,
            "seed": self.seed,
            "status": self.status,
            "world": self.world,
            "world_digest": self.world_digest,
            "start_pose": _pose_dict(self.start_pose),
            "final_pose": _pose_dict(self.final_pose),
            "distance_to_target_at_stop": (None if self.distance_to_target_at_stop is None
                                           else round(self.distance_to_target_at_stop, 6)),
            "total_path_length": round(self.total_path_length, 6),
            "total_sim_time": round(self.total_sim_time, 6),
            "n_actions": self.n_actions,
            "message": self.message,
            "observation_refs": list(self.observation_refs),
            "trajectory": [[round(x, 4), round(y, 4)] for x, y in self.trajectory],
            "steps": [s.to_dict() for s in self.steps],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EpisodeLog":
        return cls(
            id=d["id"],
            target=d["target"],
            start_index=int(d["start_index"]),
            policy=d.get("policy", ""),
            seed=int(d.get("seed", 0)),
            steps=[StepRecord.from_dict(s) for s in d.get("steps", [])],
            status=d.get("status", RUNNING),
            start_pose=_pose_from(d.get("start_pose")),
            final_pose=_pose_from(d.get("final_pose")),
            distance_to_target_at_stop=d.get("distance_to_target_at_stop"),
            total_path_length=float(d.get("total_path_length", 0.0)),
            total_sim_time=float(d.get("total_sim_time", 0.0)),
            observation_refs=list(d.get("observation_refs", [])),
            world=d.get("world", ""),
            world_digest=d.get("world_digest", ""),
            message=d.get("message", ""),
            trajectory=[tuple(p) for p in d.get("trajectory", [])],
        )


def _pose_dict(p: Pose2D | None) -> dict | None:
    if p is None:
        return None
    return {"x": round(p.x, 6), "y": round(p.y, 6), "heading": round(p.heading, 6)}


def _pose_from(d: dict | None) -> Pose2D | None:
    return None if d is None else Pose2D.from_dict(d)


# ---------------------------------------------------------------------------
# the node


class Policy(Protocol):
    name: str

    def reset(self, target: str) -> None: ...

    def act(self, obs: Observation) -> DiscreteAction: ...


class CaptureFailed(RuntimeError):
    pass


class PolicyFailed(RuntimeError):
    """Raised by a policy that cannot continue; the episode ends as move_failed."""


class VsnNode:
    """Client side of the stack: camera + odometry subscriber, /discrete_move caller."""

    name = "visual_semantic_navigation"

    def __init__(self, bus: Bus, driver, config: VsnConfig | None = None,
                 service_timeout: float | None = None,
                 frame_sink: Callable[[str, int, Observation], str] | None = None,
                 pose_probe: Callable[[], Pose2D] | None = None):
        self.bus = bus
        self.driver = driver
        self.config = config or VsnConfig()
        self.service_timeout = service_timeout
        self.frame_sink = frame_sink
        self.pose_probe = pose_probe
        n = self.config.median_window
        self.depth_sub = bus.subscribe(DEPTH, queue_capacity=max(n, 1), node=self.name)
        self.color_sub = bus.subscribe(COLOR, queue_capacity=max(n, 1), node=self.name)
        self.status_sub = bus.subscribe(STATUS, queue_capacity=4, node=self.name)
        self.odom_sub = bus.subscribe(ODOM, queue_capacity=1, node=self.name)
        bus.declare_client(MOVE_SERVICE, self.name)
        bus.declare_client(RESET_ODOM, self.name)
        self._odom: OdomSample | None = None
        self.start_odom: OdomSample | None = None

    # -- sensing ----------------------------------------------------------
    def _fresh_odom(self, after: float, limit: float = 1.0) -> OdomSample:
        waited = 0.0
        while True:
            env = self.odom_sub.latest()
            if env is not None:
                self._odom = env.payload
            if self._odom is not None and self._odom.stamp >= after - 1e-9:
                return self._odom
            if waited > limit:
                raise CaptureFailed("odometry stream is silent")
            self.driver.wait(0.01)
            waited += 0.01

    def begin_episode(self) -> None:
        self.bus.call_service(RESET_ODOM, None, timeout=self.service_timeout)
        self._odom = None
        self.start_odom = None
        self.depth_sub.drain()
        self.color_sub.drain()
        self.status_sub.drain()

    def observe(self, last_action: DiscreteAction | None, step: int) -> Observation:
        """Collect N fresh depth frames (stationary) plus the matching semantic scan."""
        n = self.config.median_window
        t_req = self.driver.now()
        self.depth_sub.drain()
        self.color_sub.drain()
        frames: list[DepthScan] = []
        semantic: SemanticScan | None = None
        waited = 0.0
        while len(frames) < n:
            if self.status_sub.drain():
                raise CaptureFailed("camera reported a capture error")
            for env in self.depth_sub.drain():
                if env.stamp >= t_req - 1e-9:
                    frames.append(env.payload)
            for env in self.color_sub.drain():
                if env.stamp >= t_req - 1e-9:
                    semantic = env.payload
            if len(frames) >= n:
                break
            if waited > 5.0 + n:
                raise CaptureFailed("camera stream is silent")
            self.driver.wait(0.01)
            waited += 0.01
        frames = frames[-n:]
        depth = median_filter(frames)
        if semantic is None or semantic.stamp != depth.stamp:
            for env in self.color_sub.drain():
                semantic = env.payload
        odom = self._fresh_odom(depth.stamp)
        if self.start_odom is None:
            # the first observation defines the episode frame, so it reads exactly zero
            self.start_odom = odom
        gps, compass = relative_odom(odom, self.start_odom)
        return Observation(semantic, depth, gps, compass, last_action, step, self.config.target)

    # -- the loop ---------------------------------------------------------
    def run_episode(self, policy: Policy, episode: EpisodeLog) -> EpisodeLog:
        cfg = self.config
        t_start = self.driver.now()
        try:
            policy.reset(cfg.target)
            self.begin_episode()
        except (BusError, CaptureFailed, PolicyFailed) as exc:
            episode.set_status(MOVE_FAILED)
            episode.message = str(exc)
            return episode
        last: DiscreteAction | None = None
        if self.pose_probe is not None:
            episode.trajectory.append(self.pose_probe().xy)

        while episode.status == RUNNING:
            if episode.n_actions >= cfg.max_steps:
                episode.set_status(LIMIT_REACHED)
                break
            step = episode.n_actions
            try:
                obs = self.observe(last, step)
            except CaptureFailed as exc:
                episode.set_status(MOVE_FAILED)
                episode.message = str(exc)
                break
            try:
                intended = policy.act(obs)
            except PolicyFailed as exc:
                episode.set_status(MOVE_FAILED)
                episode.message = f"policy failed: {exc}"
                break
            executed = intended
            fmin = frontal_min(obs.depth, cfg.obstacle_cone)
            guard = fmin < cfg.obstacle_threshold
            if intended.kind is ActionKind.MOVE_FORWARD and guard:
                executed = DiscreteAction.left(cfg.guard_turn_deg)
            ref = self.frame_sink(episode.id, step, obs) if self.frame_sink else None
            if ref is not None:
                episode.observation_refs.append(ref)
            try:
                result = self.bus.call_service(MOVE_SERVICE, executed, timeout=self.service_timeout)
            except (ServiceTimeout, BusError) as exc:
                result = MoveResult(False, message=f"service error: {exc}")
            episode.steps.append(StepRecord(
                intended=intended, executed=executed, result=result, guard=guard,
                frontal_min=fmin, gps=obs.gps, compass=obs.compass,
                phase=getattr(policy, "phase", ""), frame_ref=ref, sim_time=self.driver.now()))
            if executed.kind.is_move and result.achieved:
                episode.total_path_length += abs(result.achieved)
            if self.pose_probe is not None:
                episode.trajectory.append(self.pose_probe().xy)
            last = executed
            if executed.kind is ActionKind.STOP:
                episode.set_status(SUCCESS_CLAIMED)
            elif not result.success:
                episode.set_status(COLLISION if result.collision else MOVE_FAILED)
                episode.message = result.message
        episode.total_sim_time = self.driver.now() - t_start
        return episode
