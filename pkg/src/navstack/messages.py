"""Message types exchanged between nodes on the bus."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np


def wrap_deg(angle: float) -> float:
    """Normalize an angle in degrees to [0, 360)."""
    a = math.fmod(angle, 360.0)
    if a < 0.0:
        a += 360.0
    # fmod of a tiny negative number can round up to exactly 360
    if a >= 360.0:
        a = 0.0
    return a


def signed_deg(angle: float) -> float:
    """Map an angle in degrees to (-180, 180]."""
    a = wrap_deg(angle)
    return a - 360.0 if a > 180.0 else a


@dataclass(frozen=True)
class Pose2D:
    x: float
    y: float
    heading: float = 0.0  # degrees, counter-clockwise from +x

    def __post_init__(self):
        object.__setattr__(self, "heading", wrap_deg(self.heading))

    @property
    def xy(self) -> tuple[float, float]:
        return (self.x, self.y)

    def to_dict(self) -> dict:
        return {"x": self.x, "y": self.y, "heading": self.heading}

    @classmethod
    def from_dict(cls, d: dict) -> "Pose2D":
        return cls(float(d["x"]), float(d["y"]), float(d.get("heading", 0.0)))


@dataclass(frozen=True)
class Twist:
    v: float = 0.0  # m/s, forward positive
    w: float = 0.0  # rad/s, counter-clockwise positive

    def clamped(self, v_max: float, w_max: float) -> "Twist":
        return Twist(max(-v_max, min(v_max, self.v)), max(-w_max, min(w_max, self.w)))

    @property
    def is_zero(self) -> bool:
        return self.v == 0.0 and self.w == 0.0


@dataclass(frozen=True)
class OdomSample:
    x: float
    y: float
    heading: float
    stamp: float
    seq: int

    def __post_init__(self):
        object.__setattr__(self, "heading", wrap_deg(self.heading))


@dataclass(frozen=True)
class BumperEvent:
    pose: Pose2D
    stamp: float


@dataclass(frozen=True, eq=False)
class DepthScan:
    ranges: np.ndarray
    fov: float
    stamp: float
    pose_hint: Pose2D
    max_range: float = 5.0

    @property
    def n_rays(self) -> int:
        return int(self.ranges.shape[0])

    def ray_angles(self) -> np.ndarray:
        """Ray bearings in degrees relative to the heading (ray 0 = leftmost negative offset)."""
        return ray_offsets(self.fov, self.n_rays)


@dataclass(frozen=True, eq=False)
class SemanticScan:
    labels: tuple[str, ...]
    hit_ranges: np.ndarray
    visible: np.ndarray
    fov: float
    stamp: float
    pose_hint: Pose2D
    max_range: float = 5.0

    @property
    def n_rays(self) -> int:
        return len(self.labels)

    def ray_angles(self) -> np.ndarray:
        return ray_offsets(self.fov, self.n_rays)


def ray_offsets(fov: float, n_rays: int) -> np.ndarray:
    """Evenly spaced bearing offsets: ray 0 at -fov/2, spacing fov/n_rays.

    With fov=90 and 180 rays this gives -45.0, -44.5, ..., +44.5.
    A single ray points straight ahead.
    """
    if n_rays == 1:
        return np.zeros(1)
    return -fov / 2.0 + np.arange(n_rays) * (fov / n_rays)


class ActionKind(str, enum.Enum):
    MOVE_FORWARD = "MOVE_FORWARD"
    MOVE_BACKWARD = "MOVE_BACKWARD"
    TURN_LEFT = "TURN_LEFT"
    TURN_RIGHT = "TURN_RIGHT"
    STOP = "STOP"

    @property
    def is_move(self) -> bool:
        return self in (ActionKind.MOVE_FORWARD, ActionKind.MOVE_BACKWARD)

    @property
    def is_turn(self) -> bool:
        return self in (ActionKind.TURN_LEFT, ActionKind.TURN_RIGHT)


DEFAULT_STEP_M = 0.25
DEFAULT_TURN_DEG = 30.0


@dataclass(frozen=True)
class DiscreteAction:
    kind: ActionKind
    magnitude: float | None = None  # meters for moves, degrees for turns

    def __post_init__(self):
        kind = ActionKind(self.kind)
        object.__setattr__(self, "kind", kind)
        if kind is ActionKind.STOP:
            object.__setattr__(self, "magnitude", None)
        elif self.magnitude is None or not self.magnitude > 0:
            raise ValueError(f"{kind.value} needs a positive magnitude, got {self.magnitude!r}")

    @classmethod
    def forward(cls, m: float = DEFAULT_STEP_M) -> "DiscreteAction":
        return cls(ActionKind.MOVE_FORWARD, m)

    @classmethod
    def backward(cls, m: float = DEFAULT_STEP_M) -> "DiscreteAction":
        return cls(ActionKind.MOVE_BACKWARD, m)

    @classmethod
    def left(cls, deg: float = DEFAULT_TURN_DEG) -> "DiscreteAction":
        return cls(ActionKind.TURN_LEFT, deg)

    @classmethod
    def right(cls, deg: float = DEFAULT_TURN_DEG) -> "DiscreteAction":
        return cls(ActionKind.TURN_RIGHT, deg)

    @classmethod
    def stop(cls) -> "DiscreteAction":
        return cls(ActionKind.STOP)

    def to_dict(self) -> dict:
        return {"kind": self.kind.value, "magnitude": self.magnitude}

    @classmethod
    def from_dict(cls, d: dict) -> "DiscreteAction":
        return cls(ActionKind(d["kind"]), d.get("magnitude"))

    def __str__(self) -> str:
        if self.magnitude is None:
            return self.kind.value
        return f"{self.kind.value}({self.magnitude:g})"


@dataclass
class MoveResult:
    success: bool
    final_turn_error: float = 0.0  # turn error on the final odometry, degrees in [0, 360)
    final_straight_error: float = 0.0  # remaining distance on the final odometry, meters
    actions_elapsed_time: float = 0.0
    collision: bool = False
    achieved: float = 0.0  # meters moved or degrees turned, from odometry
    message: str = ""
    final_odom: OdomSample | None = field(default=None, repr=False)

    def to_dict(self) -> dict:
        return {
            "success": self.success,
            "final_turn_error": self.final_turn_error,
            "final_straight_error": self.final_straight_error,
            "actions_elapsed_time": self.actions_elapsed_time,
            "collision": self.collision,
            "achieved": self.achieved,
            "message": self.message,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MoveResult":
        keys = ("success", "final_turn_error", "final_straight_error",
                "actions_elapsed_time", "collision", "achieved", "message")
        return cls(**{k: d[k] for k in keys if k in d})
