"""Assemble the node graph on one bus: robot_api, camera_api and discrete_move.

vsn_core is a client of this stack; see :mod:`navstack.vsn_core`.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .bus import Bus
from .camera_api import CameraConfig, CameraNode
from .discrete_move import DiscreteMoveServer, MotionConfig
from .messages import Pose2D
from .robot_api import RobotApiNode, SimulatedBase
from .scheduler import LockstepDriver, SimClock, ThreadedDriver
from .sim_world import NoiseModel, WorldMap


@dataclass
class StackOptions:
    motion: MotionConfig = field(default_factory=MotionConfig)
    camera: CameraConfig | None = field(default_factory=CameraConfig)
    noise: NoiseModel = field(default_factory=NoiseModel)
    remaps: list[tuple[str, str]] = field(default_factory=list)
    odom_rate: float = 30.0
    lockstep: bool = True
    speedup: float = 20.0
    odom_drift: bool = False
    record_ticks: bool = False


class Stack:
    def __init__(self, world: WorldMap, start: Pose2D, options: StackOptions | None = None):
        opts = options or StackOptions()
        self.world = world
        self.options = opts
        self.clock = SimClock()
        if opts.lockstep:
            self.driver = LockstepDriver(self.clock)
        else:
            self.driver = ThreadedDriver(self.clock, speedup=opts.speedup)
        self.bus = Bus(time_source=lambda: self.clock.now)
        for src, dst in opts.remaps:
            self.bus.remap(src, dst)

        base_seq, cam_seq = np.random.SeedSequence(opts.noise.rng_seed).spawn(2)
        self.base = SimulatedBase(world, start, opts.noise, np.random.default_rng(base_seq),
                                  drift=opts.odom_drift)
        self.robot = RobotApiNode(self.bus, self.clock, self.base,
                                  v_max=opts.motion.linear_velocity,
                                  w_max=opts.motion.angular_velocity,
                                  odom_rate=opts.odom_rate)
        self.camera = None
        if opts.camera is not None:
            self.camera = CameraNode(self.bus, self.clock, world, self.true_pose, opts.noise,
                                     np.random.default_rng(cam_seq), opts.camera)
        self.mover = DiscreteMoveServer(self.bus, self.driver, opts.motion, record=opts.record_ticks)
        self.driver.start()

    def true_pose(self, t: float | None = None) -> Pose2D:
        self.base.advance(self.clock.now if t is None else t)
        return self.base.pose

    def topology(self) -> dict:
        return self.bus.topology()

    def close(self) -> None:
        self.driver.stop()
        self.robot.shutdown()
        if self.camera is not None:
            self.camera.shutdown()

    def __enter__(self) -> "Stack":
        return self

    def __exit__(self, *exc) -> None:
        self.close()
