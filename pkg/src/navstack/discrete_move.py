"""discrete_move service: closed-loop execution of discrete navigation actions.

Each action is driven from odometry until its error enters tolerance: the
turn error is ``(target - current) mod 360`` in degrees, the straight error is
the requested distance minus the Euclidean displacement from the start. Linear
moves (and, symmetrically, turns) follow an accelerate / cruise / decelerate
profile with uniformly accelerated speed ``sqrt(v0^2 + 2 a s)``.
"""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass, field, replace
from pathlib import Path

from .bus import Bus
from .config import ConfigError, parse_flat_config
from .messages import ActionKind, DiscreteAction, MoveResult, OdomSample, Twist, signed_deg, wrap_deg
from .robot_api import BUMPER, CMD_VEL, ODOM

SERVICE = "/discrete_move"

TURN_TOLERANCE_DEG = 0.1
STRAIGHT_TOLERANCE_M = 0.005
LINEAR_CREEP = 0.02  # m/s
ANGULAR_CREEP = 0.05  # rad/s
TERMINAL_TIME_CONSTANT = 0.2  # s; speed <= remaining / tau near the goal
# stop is triggered at half the tolerance so odometry noise on the settled sample
# rarely pushes the verdict outside the full tolerance
ODOM_SILENCE_S = 1.0


class DiscreteMoveBusy(RuntimeError):
    pass


def turn_error(target: float, current: float) -> float:
    """(target - current) mod 360, in [0, 360)."""
    return wrap_deg(target - current)


def signed_turn_error(target: float, current: float) -> float:
    """Turn error mapped to (-180, 180]; positive means turn left."""
    return signed_deg(target - current)


def straight_error(d: float, x: float, y: float, x_init: float, y_init: float) -> float:
    """Requested distance minus displacement: positive = remaining, negative = overshoot."""
    return d - math.sqrt((x - x_init) ** 2 + (y - y_init) ** 2)


def turn_within_tolerance(err_deg: float, tol: float = TURN_TOLERANCE_DEG) -> bool:
    """Accept a [0, 360) turn error that is within ``tol`` of 0 from either side."""
    return err_deg < tol or err_deg > 360.0 - tol


def profile_speed(v_init: float, a: float, covered: float, phase: str, v_max: float) -> float:
    """Speed magnitude for one phase of the accelerate / cruise / decelerate profile.

    ``covered`` is measured from the start of the phase. In the decel phase
    ``v_init`` is the peak speed at which braking began.
    """
    covered = max(0.0, covered)
    if phase == "accel":
        return min(math.sqrt(v_init * v_init + 2.0 * a * covered), v_max)
    if phase == "cruise":
        return v_max
    if phase == "decel":
        return math.sqrt(max(0.0, v_init * v_init - 2.0 * a * covered))
    raise ValueError(f"unknown profile phase {phase!r}")


@dataclass(frozen=True)
class MotionConfig:
    linear_velocity: float = 0.3
    angular_velocity: float = 0.5
    accel_decel_distance: float | None = None  # None: a third of the commanded move
    timeout: float = 30.0
    tick_rate: float = 50.0
    settle_time: float = 0.05

    def __post_init__(self):
        if not self.linear_velocity > 0:
            raise ConfigError("linear_velocity must be positive")
        if not self.angular_velocity > 0:
            raise ConfigError("angular_velocity must be positive")
        if self.accel_decel_distance is not None and not self.accel_decel_distance > 0:
            raise ConfigError("accel_decel_distance must be positive")
        if not self.timeout > 0:
            raise ConfigError("timeout_s must be positive")


_MOTION_KEYS = {
    "linear_velocity": "linear_velocity",
    "angular_velocity": "angular_velocity",
    "accel_decel_distance": "accel_decel_distance",
    "timeout_s": "timeout",
    "timeout": "timeout",
    "tick_rate": "tick_rate",
}


def motion_config_from_mapping(values: dict[str, str], base: MotionConfig | None = None) -> MotionConfig:
    kwargs = {}
    for key, raw in values.items():
        attr = _MOTION_KEYS.get(key)
        if attr is None:
            raise ConfigError(f"unknown discrete_move key {key!r}")
        try:
            kwargs[attr] = float(raw)
        except ValueError as exc:
            raise ConfigError(f"discrete_move.{key}: {raw!r} is not a number") from exc
    return replace(base or MotionConfig(), **kwargs)


def load_motion_config(path: str | Path) -> MotionConfig:
    """Read the ``discrete_move`` section of a flat ``key: value`` file."""
    cfg = parse_flat_config(Path(path).read_text(encoding="utf-8"), default_section="discrete_move")
    return motion_config_from_mapping(cfg.section("discrete_move"))


@dataclass
class Plan:
    """Phase boundaries for one move or turn, in the action's own units."""

    total: float
    accel: float
    decel: float
    a: float
    v_max: float
    creep: float

    @property
    def v_peak(self) -> float:
        return min(self.v_max, math.sqrt(2.0 * self.a * self.accel))

    @classmethod
    def build(cls, total: float, v_max: float, creep: float, ramp: float | None) -> "Plan":
        ramp = total / 3.0 if ramp is None else ramp
        a = v_max * v_max / (2.0 * ramp)
        seg = min(ramp, total / 2.0)
        return cls(total, seg, seg, a, v_max, creep)

    def phase(self, covered: float) -> str:
        remaining = self.total - covered
        if covered < self.accel:
            # a short triangular plan can reach its decel point before the accel one
            return "decel" if remaining < self.decel and covered >= self.total / 2 else "accel"
        if remaining > self.decel:
            return "cruise"
        return "decel"

    def speed(self, covered: float, tau: float = TERMINAL_TIME_CONSTANT) -> tuple[float, str]:
        remaining = self.total - covered
        ph = self.phase(covered)
        if ph == "accel":
            v = profile_speed(0.0, self.a, covered, "accel", self.v_max)
        elif ph == "cruise":
            v = self.v_max
        else:
            v = profile_speed(self.v_peak, self.a, self.decel - remaining, "decel", self.v_max)
        v = max(v, self.creep)
        v = min(v, max(self.creep, remaining / tau))
        return v, ph


@dataclass
class TickRecord:
    t: float
    v: float
    w: float
    covered: float
    remaining: float
    phase: str


@dataclass
class DiscreteMoveServer:
    """Serves /discrete_move. One action at a time; a concurrent call raises DiscreteMoveBusy."""

    bus: Bus
    driver: object
    config: MotionConfig = field(default_factory=MotionConfig)
    name: str = "discrete_move"
    record: bool = False

    def __post_init__(self):
        self.odom_sub = self.bus.subscribe(ODOM, queue_capacity=4, node=self.name)
        self.bumper_sub = self.bus.subscribe(BUMPER, queue_capacity=4, node=self.name)
        self.cmd_pub = self.bus.advertise(CMD_VEL, node=self.name)
        self.bus.register_service(SERVICE, self.handle, node=self.name)
        self._busy = threading.Lock()
        self._odom: OdomSample | None = None
        self.trace: list[TickRecord] = []

    def handle(self, request: DiscreteAction) -> MoveResult:
        return self.execute(request)

    # -- plumbing ---------------------------------------------------------
    def _publish(self, v: float, w: float) -> None:
        self.cmd_pub.publish(Twist(v, w), stamp=self.driver.now())

    def _latest_odom(self) -> OdomSample | None:
        env = self.odom_sub.latest()
        if env is not None:
            self._odom = env.payload
        return self._odom

    def _wait_fresh_odom(self, after: float, limit: float) -> OdomSample | None:
        """Tick until an odometry sample stamped >= ``after`` arrives (None on silence)."""
        dt = 1.0 / self.config.tick_rate
        waited = 0.0
        while True:
            odom = self._latest_odom()
            if odom is not None and odom.stamp >= after - 1e-9:
                return odom
            if waited >= limit:
                return None
            self.driver.wait(dt)
            waited += dt

    def _bumped(self) -> bool:
        return bool(self.bumper_sub.drain())

    # -- control loop -----------------------------------------------------
    def execute(self, action: DiscreteAction, config: MotionConfig | None = None) -> MoveResult:
        if not self._busy.acquire(blocking=False):
            raise DiscreteMoveBusy("discrete_move is already executing an action")
        try:
            return self._execute(action, config or self.config)
        finally:
            self._busy.release()

    def _execute(self, action: DiscreteAction, cfg: MotionConfig) -> MoveResult:
        t0 = self.driver.now()
        if action.kind is ActionKind.STOP:
            self._publish(0.0, 0.0)
            return MoveResult(success=True, actions_elapsed_time=0.0)

        self.bumper_sub.drain()
        start = self._wait_fresh_odom(t0, ODOM_SILENCE_S)
        if start is None:
            self._publish(0.0, 0.0)
            return MoveResult(False, message="no odometry", actions_elapsed_time=self.driver.now() - t0)

        is_turn = action.kind.is_turn
        sign = 1.0 if action.kind in (ActionKind.MOVE_FORWARD, ActionKind.TURN_LEFT) else -1.0
        if is_turn:
            plan = Plan.build(action.magnitude, math.degrees(cfg.angular_velocity),
                              math.degrees(ANGULAR_CREEP), None)
            tol = TURN_TOLERANCE_DEG
            target = wrap_deg(start.heading + sign * action.magnitude)
        else:
            plan = Plan.build(action.magnitude, cfg.linear_velocity, LINEAR_CREEP,
                              cfg.accel_decel_distance)
            tol = STRAIGHT_TOLERANCE_M

        dt = 1.0 / cfg.tick_rate
        odom = start
        prev_heading = start.heading
        turned = 0.0
        last_stamp = start.stamp

        def progress(o: OdomSample) -> float:
            nonlocal prev_heading, turned
            if is_turn:
                turned += sign * signed_deg(o.heading - prev_heading)
                prev_heading = o.heading
                return turned
            return math.hypot(o.x - start.x, o.y - start.y)

        covered = 0.0
        while True:
            now = self.driver.now()
            if self._bumped():
                self._publish(0.0, 0.0)
                return self._result(False, action, start, odom, covered, t0, target if is_turn else None,
                                    collision=True, message="collision")
            if now - t0 > cfg.timeout:
                self._publish(0.0, 0.0)
                return self._result(False, action, start, odom, covered, t0, target if is_turn else None,
                                    message="timeout")
            fresh = self._latest_odom()
            if fresh is not odom and fresh is not None:
                odom = fresh
                last_stamp = odom.stamp
                covered = progress(odom)
            elif now - last_stamp > ODOM_SILENCE_S:
                self._publish(0.0, 0.0)
                return self._result(False, action, start, odom, covered, t0, target if is_turn else None,
                                    message="odometry silent")

            remaining = plan.total - covered
            if abs(remaining) < tol / 2:
                # stop, let the base settle, then judge on a sample taken at rest
                self._publish(0.0, 0.0)
                t_stop = self.driver.now()
                settled = self._wait_fresh_odom(t_stop + cfg.settle_time, ODOM_SILENCE_S)
                if settled is None:
                    return self._result(False, action, start, odom, covered, t0,
                                        target if is_turn else None, message="odometry silent")
                odom = settled
                last_stamp = odom.stamp
                covered = progress(odom)
                if self._bumped():
                    return self._result(False, action, start, odom, covered, t0,
                                        target if is_turn else None, collision=True, message="collision")
                if self._within(action, start, odom, target if is_turn else None):
                    return self._result(True, action, start, odom, covered, t0, target if is_turn else None)
                continue

            if remaining < 0:
                speed, ph = -plan.creep, "correct"
            else:
                speed, ph = plan.speed(covered)
            if is_turn:
                v, w = 0.0, sign * math.radians(speed)
            else:
                v, w = sign * speed, 0.0
            self._publish(v, w)
            if self.record:
                self.trace.append(TickRecord(now, v, w, covered, remaining, ph))
            self.driver.wait(dt)

    def _within(self, action: DiscreteAction, start: OdomSample, odom: OdomSample,
                target: float | None) -> bool:
        if target is not None:
            return turn_within_tolerance(turn_error(target, odom.heading))
        err = straight_error(action.magnitude, odom.x, odom.y, start.x, start.y)
        return abs(err) < STRAIGHT_TOLERANCE_M

    def _result(self, success: bool, action: DiscreteAction, start: OdomSample, odom: OdomSample,
                covered: float, t0: float, target: float | None, collision: bool = False,
                message: str = "") -> MoveResult:
        if target is not None:
            turn_err = signed_turn_error(target, odom.heading)
            straight = 0.0
        else:
            turn_err = signed_turn_error(start.heading, odom.heading)
            straight = straight_error(action.magnitude, odom.x, odom.y, start.x, start.y)
        return MoveResult(
            success=success,
            final_turn_error=turn_err,
            final_straight_error=straight,
            actions_elapsed_time=self.driver.now() - t0,
            collision=collision,
            achieved=covered,
            message=message,
            final_odom=odom,
        )
