"""Scene descriptions, the built-in training/testing scenes and seeded spawning.

A scene is plain data (bounds, obstacles, spawn rule) and round-trips through
JSON, so custom scenes can be loaded with the ``file:<path>`` scenario id.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional, Union

import numpy as np

from pseudolaser_nav.config import WorldConfig
from pseudolaser_nav.geometry import Circle, ConvexPolygon
from pseudolaser_nav.world import AgentState, Obstacle, ObstacleCategory, WorldState, wall

logger = logging.getLogger(__name__)

SPAWN_CLEARANCE = 0.1

SINGLE_OBSTACLE_KINDS = ("cafe_table", "table", "fire_hydrant", "construction_cone", "cabinet")
COMPLEX_GROUND_KINDS = ("special_floor", "clothes", "slope")


class UnknownScenarioError(ValueError):
    """Raised for scenario ids that name no known scene."""


class SpawnError(RuntimeError):
    """Raised when no collision-free start/goal placement was found."""


@dataclass(frozen=True)
class ScenarioId:
    name: str
    args: tuple[str, ...] = ()

    @classmethod
    def parse(cls, text: Union[str, "ScenarioId"]) -> "ScenarioId":
        if isinstance(text, ScenarioId):
            return text
        name, *args = str(text).strip().split(":")
        if not name:
            raise UnknownScenarioError(f"Empty scenario id: {text!r}")
        return cls(name, tuple(args))

    def __str__(self) -> str:
        return ":".join((self.name, *self.args))


@dataclass(frozen=True)
class Region:
    xmin: float
    ymin: float
    xmax: float
    ymax: float

    def sample(self, rng: np.random.Generator) -> tuple[float, float]:
        return (float(rng.uniform(self.xmin, self.xmax)), float(rng.uniform(self.ymin, self.ymax)))


@dataclass(frozen=True)
class SpawnRule:
    """How agents are placed.

    ``regions``: each start/goal drawn from a uniformly chosen region.
    ``circle``: starts on a circle, goals antipodal.
    ``fixed``: explicit (x, y, heading) starts and (x, y) goals.
    """

    n_agents: int = 1
    mode: str = "regions"
    starts: tuple[Region, ...] = ()
    goals: tuple[Region, ...] = ()
    circle_center: tuple[float, float] = (0.0, 0.0)
    circle_radius: float = 3.0
    fixed_starts: tuple[tuple[float, float, float], ...] = ()
    fixed_goals: tuple[tuple[float, float], ...] = ()
    min_goal_distance: float = 1.0
    heading_jitter: float = 0.0

    def __post_init__(self) -> None:
        if self.mode not in ("regions", "circle", "fixed"):
            raise ValueError(f"unknown spawn mode {self.mode!r}")
        if self.n_agents < 1:
            raise ValueError(f"n_agents must be >= 1, got {self.n_agents}")
        if self.mode == "regions" and not (self.starts and self.goals):
            raise ValueError("regions spawn needs start and goal regions")
        if self.mode == "fixed" and len(self.fixed_starts) != len(self.fixed_goals):
            raise ValueError("fixed spawn needs one goal per start")


@dataclass(frozen=True)
class SceneDescription:
    name: str
    bounds: tuple[float, float, float, float]
    obstacles: tuple[Obstacle, ...]
    spawn: SpawnRule
    waypoints: tuple[tuple[float, float], ...] = field(default=())

    def to_dict(self) -> dict[str, Any]:
        spawn = self.spawn
        return {
            "name": self.name,
            "bounds": list(self.bounds),
            "obstacles": [o.to_dict() for o in self.obstacles],
            "spawn": {
                "n_agents": spawn.n_agents,
                "mode": spawn.mode,
                "starts": [list(_region_tuple(r)) for r in spawn.starts],
                "goals": [list(_region_tuple(r)) for r in spawn.goals],
                "circle_center": list(spawn.circle_center),
                "circle_radius": spawn.circle_radius,
                "fixed_starts": [list(s) for s in spawn.fixed_starts],
                "fixed_goals": [list(g) for g in spawn.fixed_goals],
                "min_goal_distance": spawn.min_goal_distance,
                "heading_jitter": spawn.heading_jitter,
            },
            "waypoints": [list(w) for w in self.waypoints],
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "SceneDescription":
        spawn = dict(data.get("spawn", {}))
        for key in ("starts", "goals"):
            spawn[key] = tuple(Region(*r) for r in spawn.get(key, ()))
        for key in ("circle_center",):
            if key in spawn:
                spawn[key] = tuple(spawn[key])
        spawn["fixed_starts"] = tuple(tuple(s) for s in spawn.get("fixed_starts", ()))
        spawn["fixed_goals"] = tuple(tuple(g) for g in spawn.get("fixed_goals", ()))
        return cls(
            name=data.get("name", "custom"),
            bounds=tuple(data["bounds"]),
            obstacles=tuple(Obstacle.from_dict(o) for o in data.get("obstacles", ())),
            spawn=SpawnRule(**spawn),
            waypoints=tuple(tuple(w) for w in data.get("waypoints", ())),
        )

    def to_json(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict(), indent=2), encoding="utf-8")
        return path

    @classmethod
    def from_json(cls, path: Union[str, Path]) -> "SceneDescription":
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(f"Scene file not found: {path}")
        return cls.from_dict(json.loads(path.read_text(encoding="utf-8")))


def _region_tuple(r: Region) -> tuple[float, float, float, float]:
    return (r.xmin, r.ymin, r.xmax, r.ymax)


def _room(bounds: tuple[float, float, float, float], height: float = 1.0) -> list[Obstacle]:
    xmin, ymin, xmax, ymax = bounds
    return [
        wall((xmin, ymin), (xmax, ymin), height=height),
        wall((xmax, ymin), (xmax, ymax), height=height),
        wall((xmax, ymax), (xmin, ymax), height=height),
        wall((xmin, ymax), (xmin, ymin), height=height),
    ]


def _legs(
    center: tuple[float, float], size: tuple[float, float], height: float, inset: float = 0.06
) -> list[Obstacle]:
    cx, cy = center
    hx, hy = size[0] / 2 - inset, size[1] / 2 - inset
    return [
        Obstacle(Circle((cx + sx * hx, cy + sy * hy), 0.03), (0.0, height))
        for sx in (-1, 1)
        for sy in (-1, 1)
    ]


def _single_obstacle(kind: str) -> list[Obstacle]:
    if kind == "cafe_table":
        return [
            Obstacle(Circle((0.0, 0.0), 0.5), (0.2, 0.28), ObstacleCategory.TABLE_TOP),
            Obstacle(Circle((0.0, 0.0), 0.06), (0.0, 0.2)),
        ]
    if kind == "table":
        top = ConvexPolygon.rectangle((0.0, 0.0), (1.2, 0.8))
        return [Obstacle(top, (0.2, 0.28), ObstacleCategory.TABLE_TOP), *_legs((0.0, 0.0), (1.2, 0.8), 0.2)]
    if kind == "fire_hydrant":
        return [Obstacle(Circle((0.0, 0.0), 0.18), (0.0, 0.55))]
    if kind == "construction_cone":
        return [Obstacle(Circle((0.0, 0.0), 0.3), (0.0, 0.6), ObstacleCategory.CONE)]
    if kind == "cabinet":
        body = ConvexPolygon.rectangle((0.0, 0.0), (0.8, 0.5))
        return [Obstacle(body, (0.12, 0.9), ObstacleCategory.TABLE_TOP), *_legs((0.0, 0.0), (0.8, 0.5), 0.12)]
    raise UnknownScenarioError(f"Unknown single obstacle kind {kind!r}; choose from {SINGLE_OBSTACLE_KINDS}")


def _complex_ground(kind: str) -> list[Obstacle]:
    special = ObstacleCategory.SPECIAL_FLOOR
    if kind == "special_floor":
        return [Obstacle(ConvexPolygon.rectangle((0.0, 0.0), (1.6, 1.6)), (0.0, 0.0), special)]
    if kind == "clothes":
        return [
            Obstacle(ConvexPolygon.rectangle((0.0, -0.35), (0.6, 0.45), 0.4), (0.0, 0.0), special),
            Obstacle(ConvexPolygon.rectangle((0.3, 0.4), (0.5, 0.4), -0.3), (0.0, 0.0), special),
            Obstacle(ConvexPolygon.rectangle((-0.45, 0.15), (0.4, 0.5), 1.1), (0.0, 0.0), special),
        ]
    if kind == "slope":
        ramp = ConvexPolygon.rectangle((0.0, 0.0), (2.0, 3.0))
        return [Obstacle(ramp, (0.0, 0.15), ObstacleCategory.SLOPE, incline=0.0)]
    raise UnknownScenarioError(f"Unknown complex ground kind {kind!r}; choose from {COMPLEX_GROUND_KINDS}")


def _random_clutter(
    rng: np.random.Generator, count: int, area: Region, max_radius: float = 0.45
) -> list[Obstacle]:
    obstacles: list[Obstacle] = []
    while len(obstacles) < count:
        x, y = area.sample(rng)
        if max_radius < 0.3 or rng.random() < 0.5:
            footprint = Circle((x, y), float(rng.uniform(0.15, max_radius)))
        else:
            footprint = ConvexPolygon.rectangle(
                (x, y), tuple(rng.uniform(0.3, 0.8, size=2)), float(rng.uniform(0, math.pi))
            )
        obstacles.append(Obstacle(footprint, (0.0, float(rng.uniform(0.4, 1.0)))))
    return obstacles


def build_scene(scenario: Union[str, ScenarioId], seed: int = 0) -> SceneDescription:
    """Construct the scene for a scenario id; random layouts derive from ``seed``."""
    sid = ScenarioId.parse(scenario)
    rng = np.random.default_rng(seed)
    name, args = sid.name, sid.args

    if name == "empty":
        room = Region(-3.5, -3.5, 3.5, 3.5)
        n_agents = int(args[0]) if args else 1
        return SceneDescription(
            str(sid), (-4.0, -4.0, 4.0, 4.0), (),
            SpawnRule(n_agents=n_agents, starts=(room,), goals=(room,), min_goal_distance=2.0),
        )

    if name == "stage1_open":
        bounds = (-4.0, -4.0, 4.0, 4.0)
        room = Region(-3.4, -3.4, 3.4, 3.4)
        return SceneDescription(
            str(sid), bounds, tuple(_room(bounds)),
            SpawnRule(n_agents=2, starts=(room,), goals=(room,), min_goal_distance=3.0,
                      heading_jitter=math.pi / 4),
        )

    if name == "stage2_crossing":
        bounds = (-5.0, -5.0, 5.0, 5.0)
        return SceneDescription(
            str(sid), bounds, tuple(_room(bounds)),
            SpawnRule(n_agents=4, mode="circle", circle_radius=3.5, heading_jitter=math.pi / 6),
        )

    if name == "stage3_corridor":
        bounds = (-6.0, -4.0, 6.0, 4.0)
        block = Obstacle(ConvexPolygon.rectangle((0.0, 0.0), (8.0, 4.0)), (0.0, 1.0))
        legs = (
            Region(-5.5, -3.5, 5.5, -2.5),
            Region(4.5, -3.5, 5.5, 3.5),
            Region(-5.5, 2.5, 5.5, 3.5),
            Region(-5.5, -3.5, -4.5, 3.5),
        )
        corners = (Region(4.3, -3.7, 5.7, -2.3), Region(4.3, 2.3, 5.7, 3.7),
                   Region(-5.7, 2.3, -4.3, 3.7), Region(-5.7, -3.7, -4.3, -2.3))
        clutter = _random_clutter(rng, 3, Region(-3.5, -3.6, 3.5, -2.4), max_radius=0.2) + _random_clutter(
            rng, 2, Region(-3.5, 2.4, 3.5, 3.6), max_radius=0.2
        )
        return SceneDescription(
            str(sid), bounds, tuple(_room(bounds) + [block] + clutter),
            SpawnRule(n_agents=2, starts=corners, goals=legs, min_goal_distance=4.0,
                      heading_jitter=math.pi / 4),
            waypoints=((-5.0, -3.0), (5.0, -3.0), (5.0, 3.0), (-5.0, 3.0)),
        )

    if name == "test_crossing":
        n_agents = int(args[0]) if args else 4
        bounds = (-5.0, -5.0, 5.0, 5.0)
        return SceneDescription(
            str(sid), bounds, tuple(_room(bounds)),
            SpawnRule(n_agents=n_agents, mode="circle", circle_radius=4.0),
        )

    if name == "test_walls":
        bounds = (-5.0, -5.0, 5.0, 5.0)
        inner = [wall((-1.2, -5.0), (-1.2, 1.5)), wall((1.2, -1.5), (1.2, 5.0))]
        return SceneDescription(
            str(sid), bounds, tuple(_room(bounds) + inner),
            SpawnRule(n_agents=2, starts=(Region(-4.4, -4.4, -2.2, 4.4),),
                      goals=(Region(2.2, -4.4, 4.4, 4.4),), min_goal_distance=4.0),
        )

    if name == "test_random":
        bounds = (-5.0, -5.0, 5.0, 5.0)
        clutter = _random_clutter(rng, 8, Region(-3.0, -3.0, 3.0, 3.0))
        room = Region(-4.4, -4.4, 4.4, 4.4)
        return SceneDescription(
            str(sid), bounds, tuple(_room(bounds) + clutter),
            SpawnRule(n_agents=4, starts=(room,), goals=(room,), min_goal_distance=4.0),
        )

    if name == "single_obstacle":
        kind = args[0] if args else "table"
        return SceneDescription(
            str(sid), (-4.0, -2.5, 4.0, 2.5), tuple(_single_obstacle(kind)),
            SpawnRule(n_agents=1, starts=(Region(-3.0, -0.6, -2.2, 0.6),),
                      goals=(Region(2.2, -0.6, 3.0, 0.6),), min_goal_distance=3.0),
        )

    if name == "complex_ground":
        kind = args[0] if args else "special_floor"
        return SceneDescription(
            str(sid), (-4.0, -2.5, 4.0, 2.5), tuple(_complex_ground(kind)),
            SpawnRule(n_agents=1, starts=(Region(-3.0, -0.6, -2.2, 0.6),),
                      goals=(Region(2.2, -0.6, 3.0, 0.6),), min_goal_distance=3.0),
        )

    if name == "limitation_wall":
        if len(args) < 2:
            raise UnknownScenarioError("limitation_wall needs width and distance: limitation_wall:<w>:<d>")
        width, distance = float(args[0]), float(args[1])
        offset = float(args[2]) if len(args) > 2 else 0.0
        barrier = Obstacle(ConvexPolygon.rectangle((distance + 0.05, offset), (0.1, width)), (0.0, 1.0))
        half = max(width / 2 + abs(offset), 1.0) + 3.0
        return SceneDescription(
            str(sid), (-1.5, -half, distance + 4.0, half), (barrier,),
            SpawnRule(n_agents=1, mode="fixed", fixed_starts=((0.0, 0.0, 0.0),),
                      fixed_goals=((distance + 2.5, 0.0),), heading_jitter=0.05),
        )

    if name == "file":
        if not args:
            raise UnknownScenarioError("file scenario needs a path: file:<scene.json>")
        return SceneDescription.from_json(":".join(args))

    raise UnknownScenarioError(f"Unknown scenario: {sid}")


def _clear_of_obstacles(point: tuple[float, float], obstacles: tuple[Obstacle, ...], clearance: float) -> bool:
    p = np.asarray(point)
    return all(
        float(o.footprint.distance(p)[0]) >= clearance for o in obstacles if o.blocks_travel
    )


def _inside(point: tuple[float, float], bounds: tuple[float, float, float, float], margin: float) -> bool:
    xmin, ymin, xmax, ymax = bounds
    x, y = point
    return xmin + margin <= x <= xmax - margin and ymin + margin <= y <= ymax - margin


def spawn_scene(
    scene: SceneDescription,
    seed: int,
    world_cfg: Optional[WorldConfig] = None,
    n_agents: Optional[int] = None,
) -> WorldState:
    """Place agents by rejection sampling; deterministic for (scene, seed)."""
    cfg = world_cfg or WorldConfig()
    rng = np.random.default_rng(seed)
    rule = scene.spawn
    count = n_agents or rule.n_agents
    radius = cfg.agent_radius
    clearance = radius + SPAWN_CLEARANCE
    spacing = 2 * radius + SPAWN_CLEARANCE

    starts: list[tuple[float, float]] = []
    goals: list[tuple[float, float]] = []
    headings: list[float] = []

    for i in range(count):
        for _ in range(cfg.max_spawn_attempts):
            if rule.mode == "fixed":
                x, y, heading = rule.fixed_starts[i % len(rule.fixed_starts)]
                start, goal = (x, y), tuple(rule.fixed_goals[i % len(rule.fixed_goals)])
            elif rule.mode == "circle":
                angle = float(rng.uniform(-math.pi, math.pi))
                cx, cy = rule.circle_center
                r = rule.circle_radius
                start = (cx + r * math.cos(angle), cy + r * math.sin(angle))
                goal = (cx - r * math.cos(angle), cy - r * math.sin(angle))
                heading = None
            else:
                start = rule.starts[int(rng.integers(len(rule.starts)))].sample(rng)
                goal = rule.goals[int(rng.integers(len(rule.goals)))].sample(rng)
                heading = None

            if math.dist(start, goal) < rule.min_goal_distance:
                continue
            if not (_inside(start, scene.bounds, clearance) and _inside(goal, scene.bounds, clearance)):
                continue
            if not (_clear_of_obstacles(start, scene.obstacles, clearance)
                    and _clear_of_obstacles(goal, scene.obstacles, clearance)):
                continue
            if any(math.dist(start, s) < spacing for s in starts):
                continue
            if any(math.dist(goal, g) < spacing for g in goals):
                continue
            break
        else:
            raise SpawnError(
                f"Could not place agent {i} in scene '{scene.name}' "
                f"after {cfg.max_spawn_attempts} attempts"
            )

        if heading is None:
            heading = math.atan2(goal[1] - start[1], goal[0] - start[0])
        if rule.heading_jitter > 0:
            heading += float(rng.uniform(-rule.heading_jitter, rule.heading_jitter))
        starts.append(start)
        goals.append(goal)
        headings.append(math.atan2(math.sin(heading), math.cos(heading)))

    agents = [
        AgentState(
            position=(float(s[0]), float(s[1])),
            heading=h,
            goal=(float(g[0]), float(g[1])),
            radius=radius,
            camera_height=cfg.camera_height,
            height=cfg.agent_height,
        )
        for s, g, h in zip(starts, goals, headings)
    ]
    logger.debug(f"Spawned {len(agents)} agents in '{scene.name}' (seed {seed})")
    return WorldState(obstacles=list(scene.obstacles), agents=agents, bounds=scene.bounds, dt=cfg.dt)


def spawn_scenario(
    scenario: Union[str, ScenarioId],
    seed: int,
    world_cfg: Optional[WorldConfig] = None,
    n_agents: Optional[int] = None,
) -> WorldState:
    return spawn_scene(build_scene(scenario, seed), seed, world_cfg, n_agents)
