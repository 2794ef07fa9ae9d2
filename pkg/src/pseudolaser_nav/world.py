"""2.5D world state, unicycle kinematics and collision checks."""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Optional

import numpy as np

from pseudolaser_nav.geometry import Circle, ConvexPolygon, Footprint, footprint_from_dict, wrap_angle

MAX_ANGULAR_VEL = math.pi / 2
MAX_LINEAR_VEL = 1.0


class InvalidActionError(ValueError):
    """Raised for non-finite or out-of-range velocity commands."""


class ObstacleCategory(str, Enum):
    SOLID = "solid"
    TABLE_TOP = "table_top"
    CONE = "cone"
    SPECIAL_FLOOR = "special_floor"
    SLOPE = "slope"


class CollisionKind(str, Enum):
    NONE = "none"
    AGENT = "agent"
    OBSTACLE = "obstacle"
    BOUNDS = "bounds"


@dataclass(frozen=True)
class Obstacle:
    """An extruded footprint occupying ``height_interval`` above the floor.

    Slopes are floor regions whose surface rises linearly from z_lo to z_hi
    along the ``incline`` direction (radians, world frame).
    """

    footprint: Footprint
    height_interval: tuple[float, float]
    category: ObstacleCategory = ObstacleCategory.SOLID
    incline: float = 0.0

    def __post_init__(self) -> None:
        z_lo, z_hi = (float(z) for z in self.height_interval)
        object.__setattr__(self, "height_interval", (z_lo, z_hi))
        object.__setattr__(self, "category", ObstacleCategory(self.category))

        if z_lo > z_hi:
            raise ValueError(f"height_interval must satisfy z_lo <= z_hi, got {self.height_interval}")
        if z_lo < 0:
            raise ValueError(f"obstacles cannot extend below the floor, got z_lo={z_lo}")
        if self.category is ObstacleCategory.SPECIAL_FLOOR and (z_lo, z_hi) != (0.0, 0.0):
            raise ValueError("special_floor obstacles must have height_interval [0, 0]")
        if self.category is ObstacleCategory.TABLE_TOP and not z_lo > 0:
            raise ValueError("table_top obstacles must be raised (z_lo > 0)")
        if self.category is ObstacleCategory.CONE and not isinstance(self.footprint, Circle):
            raise ValueError("cone obstacles need a circular footprint")
        if self.category is ObstacleCategory.CONE and not z_hi > z_lo:
            raise ValueError("cone obstacles need a positive height")

    @property
    def blocks_travel(self) -> bool:
        return self.category is not ObstacleCategory.SLOPE

    def slope_plane(self) -> tuple[float, np.ndarray]:
        """Surface height as ``offset + gradient @ (x, y)``."""
        z_lo, z_hi = self.height_interval
        u = np.array([math.cos(self.incline), math.sin(self.incline)])
        if isinstance(self.footprint, Circle):
            c = float(np.asarray(self.footprint.center) @ u)
            p_min, p_max = c - self.footprint.radius, c + self.footprint.radius
        else:
            proj = self.footprint.array @ u
            p_min, p_max = float(proj.min()), float(proj.max())
        scale = (z_hi - z_lo) / (p_max - p_min)
        return z_lo - scale * p_min, scale * u

    def to_dict(self) -> dict[str, Any]:
        data = self.footprint.to_dict()
        data["height_interval"] = list(self.height_interval)
        data["category"] = self.category.value
        if self.category is ObstacleCategory.SLOPE:
            data["incline"] = self.incline
        return data

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "Obstacle":
        return cls(
            footprint=footprint_from_dict(data),
            height_interval=tuple(data.get("height_interval", (0.0, 1.0))),
            category=ObstacleCategory(data.get("category", "solid")),
            incline=float(data.get("incline", 0.0)),
        )


@dataclass(frozen=True)
class Action:
    """Velocity command: v in [0, 1] m/s, w_normalized in [-1, 1]."""

    v: float
    w_normalized: float

    def clamped(self) -> "Action":
        return Action(
            v=float(np.clip(self.v, 0.0, MAX_LINEAR_VEL)),
            w_normalized=float(np.clip(self.w_normalized, -1.0, 1.0)),
        )


@dataclass(frozen=True)
class AgentState:
    position: tuple[float, float]
    heading: float
    goal: tuple[float, float]
    linear_vel: float = 0.0
    angular_vel: float = 0.0
    radius: float = 0.3
    camera_height: float = 0.3
    height: float = 0.5

    def __post_init__(self) -> None:
        if not self.radius > 0:
            raise ValueError(f"agent radius must be positive, got {self.radius}")
        if not -1e-12 <= self.linear_vel <= MAX_LINEAR_VEL + 1e-12:
            raise ValueError(f"linear_vel must be in [0, 1], got {self.linear_vel}")
        if abs(self.angular_vel) > MAX_ANGULAR_VEL + 1e-12:
            raise ValueError(f"|angular_vel| must be <= pi/2, got {self.angular_vel}")

    @property
    def xy(self) -> np.ndarray:
        return np.asarray(self.position, dtype=np.float64)

    def distance_to_goal(self) -> float:
        return math.hypot(self.goal[0] - self.position[0], self.goal[1] - self.position[1])

    @property
    def w_normalized(self) -> float:
        return self.angular_vel / MAX_ANGULAR_VEL


@dataclass
class WorldState:
    obstacles: list[Obstacle]
    agents: list[AgentState]
    bounds: tuple[float, float, float, float]
    dt: float = 0.1
    time: float = 0.0

    def __post_init__(self) -> None:
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        xmin, ymin, xmax, ymax = self.bounds
        if not (xmin < xmax and ymin < ymax):
            raise ValueError(f"bounds must be (xmin, ymin, xmax, ymax), got {self.bounds}")

    def copy(self) -> "WorldState":
        return dataclasses.replace(self, obstacles=list(self.obstacles), agents=list(self.agents))


@dataclass(frozen=True)
class CollisionReport:
    collided: bool
    kind: CollisionKind = CollisionKind.NONE
    other: Optional[int] = field(default=None, compare=False)


def step_kinematics(state: AgentState, action: Action, dt: float) -> AgentState:
    """Integrate the unicycle exactly along a circular arc.

    The angular command is scaled so that w_normalized = 1 is pi/2 rad/s.
    """
    v, wn = float(action.v), float(action.w_normalized)
    if not (math.isfinite(v) and math.isfinite(wn)):
        raise InvalidActionError(f"non-finite action: v={v}, w_normalized={wn}")
    if not 0.0 <= v <= MAX_LINEAR_VEL:
        raise InvalidActionError(f"v must be in [0, 1], got {v}")
    if not -1.0 <= wn <= 1.0:
        raise InvalidActionError(f"w_normalized must be in [-1, 1], got {wn}")
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")

    w = wn * MAX_ANGULAR_VEL
    x, y = state.position
    theta = state.heading
    dtheta = w * dt

    if abs(dtheta) < 1e-12:
        x += v * dt * math.cos(theta)
        y += v * dt * math.sin(theta)
    else:
        turn_radius = v / w
        x += turn_radius * (math.sin(theta + dtheta) - math.sin(theta))
        y -= turn_radius * (math.cos(theta + dtheta) - math.cos(theta))

    return dataclasses.replace(
        state,
        position=(x, y),
        heading=wrap_angle(theta + dtheta),
        linear_vel=v,
        angular_vel=w,
    )


def check_collision(world: WorldState, agent_index: int) -> CollisionReport:
    if not 0 <= agent_index < len(world.agents):
        raise IndexError(f"agent index {agent_index} out of range")

    agent = world.agents[agent_index]
    p = agent.xy

    for j, other in enumerate(world.agents):
        if j == agent_index:
            continue
        if float(np.linalg.norm(p - other.xy)) < agent.radius + other.radius:
            return CollisionReport(True, CollisionKind.AGENT, j)

    for k, obstacle in enumerate(world.obstacles):
        if not obstacle.blocks_travel:
            continue
        if float(obstacle.footprint.distance(p)[0]) < agent.radius:
            return CollisionReport(True, CollisionKind.OBSTACLE, k)

    xmin, ymin, xmax, ymax = world.bounds
    x, y = agent.position
    r = agent.radius
    if x - r < xmin or x + r > xmax or y - r < ymin or y + r > ymax:
        return CollisionReport(True, CollisionKind.BOUNDS)

    return CollisionReport(False)


def wall(
    start: tuple[float, float],
    end: tuple[float, float],
    thickness: float = 0.1,
    height: float = 1.0,
) -> Obstacle:
    """A thin full-height box between two points."""
    sx, sy = start
    ex, ey = end
    length = math.hypot(ex - sx, ey - sy)
    angle = math.atan2(ey - sy, ex - sx)
    rect = ConvexPolygon.rectangle(((sx + ex) / 2, (sy + ey) / 2), (length, thickness), angle)
    return Obstacle(footprint=rect, height_interval=(0.0, height))
