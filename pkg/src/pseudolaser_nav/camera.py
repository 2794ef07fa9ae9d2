"""Ray-cast camera producing depth and traversability images from a WorldState.

Every pixel is resolved once into a :class:`HitRecord` entry; the depth image
and the traversability mask are both read from that record, so the two can
never disagree about which surface a pixel sees.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import IntEnum
from typing import Optional

import numpy as np

from pseudolaser_nav.config import CameraModel
from pseudolaser_nav.geometry import Circle
from pseudolaser_nav.pseudolaser import DepthImage, PseudoLaser, TraversabilityMask
from pseudolaser_nav.world import AgentState, Obstacle, ObstacleCategory, WorldState

_EPS = 1e-12


class Surface(IntEnum):
    BACKGROUND = 0
    FLOOR = 1
    OBSTACLE = 2
    SPECIAL_FLOOR = 3
    SLOPE = 4
    AGENT = 5


TRAVERSABLE_SURFACES = (Surface.FLOOR, Surface.SLOPE)


@dataclass(frozen=True)
class HitRecord:
    """First-hit distance, surface type and source index for every pixel."""

    distance: np.ndarray
    surface: np.ndarray
    index: np.ndarray
    max_range: float

    def depth(self) -> DepthImage:
        return DepthImage(np.minimum(self.distance, self.max_range), self.max_range)

    def traversability(self) -> TraversabilityMask:
        traversable = np.isin(self.surface, [int(s) for s in TRAVERSABLE_SURFACES])
        return TraversabilityMask(np.where(traversable, 0, 1).astype(np.uint8))


def column_bearings(camera: CameraModel) -> np.ndarray:
    """Bearing of each image column, left to right (positive is left)."""
    j = np.arange(camera.image_width)
    offset = 1.0 - (2.0 * j + 1.0) / camera.image_width
    if camera.projection == "cylindrical":
        return offset * camera.horizontal_fov / 2.0
    return np.arctan(offset * math.tan(camera.horizontal_fov / 2.0))


def row_elevations(camera: CameraModel) -> np.ndarray:
    """Tangent of each row's elevation, top to bottom; the lower half is negative."""
    i = np.arange(camera.image_height)
    return math.tan(camera.vertical_fov / 2.0) * (1.0 - (2.0 * i + 1.0) / camera.image_height)


def camera_rays(camera: CameraModel) -> np.ndarray:
    """Unit ray directions in the camera frame (x forward, y left, z up), shape (H, W, 3)."""
    elev = row_elevations(camera)[:, None]
    bearings = column_bearings(camera)[None, :]
    if camera.projection == "cylindrical":
        fwd = np.cos(bearings)
        lat = np.sin(bearings)
    else:
        fwd = np.ones_like(bearings)
        lat = np.tan(bearings)
    shape = camera.image_size
    rays = np.stack(
        [np.broadcast_to(fwd, shape), np.broadcast_to(lat, shape), np.broadcast_to(elev, shape)],
        axis=-1,
    )
    return rays / np.linalg.norm(rays, axis=-1, keepdims=True)


def _to_world(rays: np.ndarray, heading: float) -> np.ndarray:
    c, s = math.cos(heading), math.sin(heading)
    out = rays.copy()
    out[..., 0] = c * rays[..., 0] - s * rays[..., 1]
    out[..., 1] = s * rays[..., 0] + c * rays[..., 1]
    return out


def _prism_hits(
    footprint, z_lo: float, z_hi: float, origin: np.ndarray, dirs: np.ndarray
) -> np.ndarray:
    """Entry distance into an extruded footprint, inf on miss."""
    t_in, t_out = footprint.ray_interval(origin[:2], dirs[:, :2])
    dz = dirs[:, 2]
    oz = origin[2]

    flat = np.abs(dz) < _EPS
    with np.errstate(divide="ignore", invalid="ignore"):
        t1 = (z_lo - oz) / dz
        t2 = (z_hi - oz) / dz
    tz_in = np.where(flat, np.where(z_lo <= oz <= z_hi, -np.inf, np.inf), np.minimum(t1, t2))
    tz_out = np.where(flat, np.where(z_lo <= oz <= z_hi, np.inf, -np.inf), np.maximum(t1, t2))

    enter = np.maximum(t_in, tz_in)
    leave = np.minimum(t_out, tz_out)
    hit = (enter <= leave) & (enter > 0)
    return np.where(hit, enter, np.inf)


def _cone_hits(obstacle: Obstacle, origin: np.ndarray, dirs: np.ndarray) -> np.ndarray:
    """Nearest hit on a cone whose radius shrinks linearly to zero at z_hi."""
    circle: Circle = obstacle.footprint
    z_lo, z_hi = obstacle.height_interval
    k = circle.radius / (z_hi - z_lo)

    q = origin[:2] - np.asarray(circle.center)
    d = dirs[:, :2]
    dz = dirs[:, 2]
    h0 = z_hi - origin[2]

    a = np.einsum("ij,ij->i", d, d) - k * k * dz * dz
    b = 2.0 * (d @ q + k * k * h0 * dz)
    c = float(q @ q) - k * k * h0 * h0

    best = np.full(len(dirs), np.inf)
    linear = np.abs(a) < _EPS
    disc = b * b - 4.0 * a * c
    root = np.sqrt(np.where(disc >= 0, disc, 0.0))
    safe_a = np.where(linear, 1.0, a)
    safe_b = np.where(np.abs(b) < _EPS, 1.0, b)
    candidates = [
        np.where(~linear & (disc >= 0), (-b - root) / (2.0 * safe_a), np.inf),
        np.where(~linear & (disc >= 0), (-b + root) / (2.0 * safe_a), np.inf),
        np.where(linear & (np.abs(b) >= _EPS), -c / safe_b, np.inf),
    ]
    for t in candidates:
        z = origin[2] + t * dz
        valid = np.isfinite(t) & (t > 0) & (z >= z_lo) & (z <= z_hi)
        best = np.where(valid & (t < best), t, best)

    with np.errstate(divide="ignore", invalid="ignore"):
        t_base = (z_lo - origin[2]) / dz
    px = origin[0] + t_base * dirs[:, 0]
    py = origin[1] + t_base * dirs[:, 1]
    on_base = (
        (np.abs(dz) >= _EPS)
        & (t_base > 0)
        & (np.hypot(px - circle.center[0], py - circle.center[1]) <= circle.radius)
    )
    return np.where(on_base & (t_base < best), t_base, best)


def _half_line(f0: float, rate: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Interval of t where ``f0 + t * rate <= 0``."""
    flat = np.abs(rate) < _EPS
    with np.errstate(divide="ignore", invalid="ignore"):
        root = -f0 / rate
    inside = f0 <= 0
    lo = np.where(flat, -np.inf if inside else np.inf, np.where(rate < 0, root, -np.inf))
    hi = np.where(flat, np.inf if inside else -np.inf, np.where(rate > 0, root, np.inf))
    return lo, hi


def _slope_hits(obstacle: Obstacle, origin: np.ndarray, dirs: np.ndarray) -> np.ndarray:
    """Entry into the wedge between the floor and the incline plane, inf on miss.

    End and side faces belong to the wedge, so the ramp occludes whatever
    floor lies beyond it.
    """
    offset, gradient = obstacle.slope_plane()
    t_in, t_out = obstacle.footprint.ray_interval(origin[:2], dirs[:, :2])
    under_lo, under_hi = _half_line(
        origin[2] - offset - float(gradient @ origin[:2]), dirs[:, 2] - dirs[:, :2] @ gradient
    )
    above_lo, above_hi = _half_line(-origin[2], -dirs[:, 2])

    enter = np.maximum(np.maximum(t_in, under_lo), above_lo)
    leave = np.minimum(np.minimum(t_out, under_hi), above_hi)
    hit = (enter <= leave) & (enter > 0)
    return np.where(hit, enter, np.inf)


def cast_rays(
    world: WorldState,
    origin: np.ndarray,
    dirs: np.ndarray,
    max_range: float,
    exclude_agent: Optional[int] = None,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Resolve the first surface hit by each ray.

    Returns (distance, surface, index) arrays of shape (N,). Rays that hit
    nothing within ``max_range`` report ``max_range`` and Surface.BACKGROUND.
    """
    n = len(dirs)
    best = np.full(n, np.inf)
    surface = np.full(n, int(Surface.BACKGROUND), dtype=np.int8)
    index = np.full(n, -1, dtype=np.int32)

    def take(t: np.ndarray, kind: Surface, idx: int) -> None:
        closer = t < best
        best[closer] = t[closer]
        surface[closer] = int(kind)
        index[closer] = idx

    dz = dirs[:, 2]
    downward = dz < -_EPS
    with np.errstate(divide="ignore", invalid="ignore"):
        t_floor = np.where(downward, -origin[2] / dz, np.inf)
    floor_xy = origin[None, :2] + np.where(downward, t_floor, 0.0)[:, None] * dirs[:, :2]

    floor_kind = np.full(n, int(Surface.FLOOR), dtype=np.int8)
    floor_index = np.full(n, -1, dtype=np.int32)
    for k, obstacle in enumerate(world.obstacles):
        if obstacle.category is ObstacleCategory.SPECIAL_FLOOR:
            inside = downward & obstacle.footprint.contains(floor_xy)
            floor_kind[inside] = int(Surface.SPECIAL_FLOOR)
            floor_index[inside] = k

    closer = t_floor < best
    best[closer] = t_floor[closer]
    surface[closer] = floor_kind[closer]
    index[closer] = floor_index[closer]

    for k, obstacle in enumerate(world.obstacles):
        category = obstacle.category
        if category is ObstacleCategory.SPECIAL_FLOOR:
            continue
        if category is ObstacleCategory.SLOPE:
            take(_slope_hits(obstacle, origin, dirs), Surface.SLOPE, k)
        elif category is ObstacleCategory.CONE:
            take(_cone_hits(obstacle, origin, dirs), Surface.OBSTACLE, k)
        else:
            z_lo, z_hi = obstacle.height_interval
            take(_prism_hits(obstacle.footprint, z_lo, z_hi, origin, dirs), Surface.OBSTACLE, k)

    for j, agent in enumerate(world.agents):
        if j == exclude_agent:
            continue
        body = Circle(agent.position, agent.radius)
        take(_prism_hits(body, 0.0, agent.height, origin, dirs), Surface.AGENT, j)

    far = best > max_range
    best[far] = max_range
    surface[far] = int(Surface.BACKGROUND)
    index[far] = -1
    return best, surface, index


def _camera_origin(agent: AgentState) -> np.ndarray:
    return np.array([agent.position[0], agent.position[1], agent.camera_height])


def render_hits(world: WorldState, agent_index: int, camera: CameraModel) -> HitRecord:
    agent = world.agents[agent_index]
    rays = _to_world(camera_rays(camera), agent.heading)
    h, w = camera.image_size
    distance, surface, index = cast_rays(
        world, _camera_origin(agent), rays.reshape(-1, 3), camera.max_range, exclude_agent=agent_index
    )
    return HitRecord(
        distance=distance.reshape(h, w),
        surface=surface.reshape(h, w),
        index=index.reshape(h, w),
        max_range=camera.max_range,
    )


def render_depth(world: WorldState, agent_index: int, camera: CameraModel) -> DepthImage:
    return render_hits(world, agent_index, camera).depth()


def render_traversability(
    world: WorldState, agent_index: int, camera: CameraModel
) -> TraversabilityMask:
    return render_hits(world, agent_index, camera).traversability()


def ideal_laser(
    world: WorldState, agent_index: int, camera: CameraModel, height: float
) -> PseudoLaser:
    """Planar laser at ``height`` sharing the camera's bearings and range."""
    agent = world.agents[agent_index]
    bearings = column_bearings(camera) + agent.heading
    dirs = np.stack([np.cos(bearings), np.sin(bearings), np.zeros_like(bearings)], axis=1)
    origin = np.array([agent.position[0], agent.position[1], height])
    distance, _, _ = cast_rays(world, origin, dirs, camera.max_range, exclude_agent=agent_index)
    return PseudoLaser(distance, camera.max_range)
