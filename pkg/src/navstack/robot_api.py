"""robot_api node: applies velocity commands to the base and publishes odometry."""

from __future__ import annotations

import math
from typing import Protocol

import numpy as np

from .bus import Bus
from .messages import BumperEvent, OdomSample, Pose2D, Twist, wrap_deg
from .scheduler import SimClock
from .sim_world import NoiseModel, RobotState, WorldMap, step

CMD_VEL = "/cmd_vel"
ODOM = "/odom"
BUMPER = "/bumper"
RESET_ODOM = "/robot_api/reset_odometry"


class HardwareAdapter(Protocol):
    def apply(self, twist: Twist) -> None: ...

    def sample_odometry(self) -> OdomSample: ...

    def reset_odometry(self) -> None: ...


def relative_pose(pose: Pose2D, origin: Pose2D) -> Pose2D:
    """Express ``pose`` in the frame of ``origin`` (origin^-1 * pose)."""
    dx, dy = pose.x - origin.x, pose.y - origin.y
    c, s = math.cos(math.radians(origin.heading)), math.sin(math.radians(origin.heading))
    return Pose2D(c * dx + s * dy, -s * dx + c * dy, pose.heading - origin.heading)


class SimulatedBase:
    """Differential-drive base backed by the simulator.

    The plant is integrated lazily: ``advance(t)`` moves it to simulation time t
    under the currently applied command.
    """

    def __init__(self, world: WorldMap, pose: Pose2D, noise: NoiseModel | None = None,
                 rng: np.random.Generator | None = None, radius: float | None = None,
                 drift: bool = False):
        self.world = world
        self.noise = noise or NoiseModel()
        self.rng = rng if rng is not None else np.random.default_rng(self.noise.rng_seed)
        self.state = RobotState(pose, radius=world.robot_radius if radius is None else radius)
        self.t = 0.0
        self.applied = Twist()
        self.reset_pose = pose
        self.drift = drift
        self._heading_bias = 0.0
        self.collisions: list[tuple[float, Pose2D]] = []
        self.odometer = 0.0  # ground-truth path length, meters
        self._seq = 0

    @property
    def pose(self) -> Pose2D:
        return self.state.pose

    def advance(self, t: float) -> None:
        if t <= self.t:
            return
        dt = t - self.t
        self.t = t
        if self.applied.is_zero:
            return
        before = self.state.pose
        self.state = step(self.state, self.applied, dt, self.noise, self.world, self.rng)
        self.odometer += math.hypot(self.state.pose.x - before.x, self.state.pose.y - before.y)
        if self.state.collision:
            self.collisions.append((t, self.state.pose))
            self.applied = Twist()

    def apply(self, twist: Twist) -> None:
        self.applied = twist

    def reset_odometry(self) -> None:
        self.reset_pose = self.state.pose
        self._heading_bias = 0.0

    def teleport(self, pose: Pose2D) -> None:
        self.state = RobotState(pose, radius=self.state.radius)
        self.applied = Twist()
        self.reset_pose = pose

    def sample_odometry(self) -> OdomSample:
        rel = relative_pose(self.state.pose, self.reset_pose)
        x, y, h = rel.x, rel.y, rel.heading
        n = self.noise
        if n.odom_xy_sigma > 0:
            ex, ey = self.rng.normal(0.0, n.odom_xy_sigma, 2)
            x, y = x + float(ex), y + float(ey)
        if n.odom_heading_sigma > 0:
            e = float(self.rng.normal(0.0, n.odom_heading_sigma))
            if self.drift:
                self._heading_bias += e
                h += self._heading_bias
            else:
                h += e
        self._seq += 1
        return OdomSample(x, y, wrap_deg(h), self.t, self._seq)


class RobotApiNode:
    """Subscribes to /cmd_vel, drives the base, publishes /odom and /bumper.

    Commands are latest-wins and clamped to the velocity limits; if no command
    arrives for ``watchdog`` seconds the base is stopped.
    """

    name = "robot_api"

    def __init__(self, bus: Bus, clock: SimClock, base: SimulatedBase, v_max: float = 0.3,
                 w_max: float = 0.5, odom_rate: float = 30.0, tick_rate: float = 50.0,
                 watchdog: float = 0.5):
        self.bus = bus
        self.clock = clock
        self.base = base
        self.v_max = v_max
        self.w_max = w_max
        self.watchdog = watchdog
        self.command = Twist()
        self._last_cmd_time = -math.inf
        self._n_collisions = 0
        self.cmd_sub = bus.subscribe(CMD_VEL, queue_capacity=1, node=self.name)
        self.odom_pub = bus.advertise(ODOM, node=self.name)
        self.bumper_pub = bus.advertise(BUMPER, node=self.name)
        bus.register_service(RESET_ODOM, lambda _req: self.reset_odometry() or True, node=self.name)
        self._tasks = [
            clock.every(1.0 / tick_rate, self.tick, phase=0.0, name="robot_api.tick"),
            clock.every(1.0 / odom_rate, self.publish_odom, phase=0.0, name="robot_api.odom"),
        ]

    def on_cmd_vel(self, twist: Twist, t: float) -> None:
        self.command = twist.clamped(self.v_max, self.w_max)
        self._last_cmd_time = t

    def tick(self, t: float) -> None:
        self.base.advance(t)
        env = self.cmd_sub.latest()
        if env is not None:
            self.on_cmd_vel(env.payload, t)
        if t - self._last_cmd_time > self.watchdog:
            self.command = Twist()
        self.base.apply(self.command)
        self._flush_bumper(t)

    def _flush_bumper(self, t: float) -> None:
        while self._n_collisions < len(self.base.collisions):
            ct, pose = self.base.collisions[self._n_collisions]
            self._n_collisions += 1
            self.bumper_pub.publish(BumperEvent(pose, ct), stamp=t)
            # contact already zeroed the base; drop the command that caused it
            self.command = Twist()

    def publish_odom(self, t: float) -> OdomSample:
        self.base.advance(t)
        self._flush_bumper(t)
        sample = self.base.sample_odometry()
        self.odom_pub.publish(sample, stamp=t)
        return sample

    def reset_odometry(self) -> None:
        self.base.reset_odometry()

    def shutdown(self) -> None:
        for task in self._tasks:
            task.cancel()
