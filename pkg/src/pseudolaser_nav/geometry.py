"""Planar footprints: point distances and ray clipping, vectorized with numpy."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Union

import numpy as np

_EPS = 1e-12


@dataclass(frozen=True)
class Circle:
    center: tuple[float, float]
    radius: float

    def __post_init__(self) -> None:
        if not self.radius > 0:
            raise ValueError(f"circle radius must be positive, got {self.radius}")
        object.__setattr__(self, "center", (float(self.center[0]), float(self.center[1])))
        object.__setattr__(self, "radius", float(self.radius))

    def distance(self, points: np.ndarray) -> np.ndarray:
        """Distance from each point to the disc (0 inside)."""
        points = np.atleast_2d(np.asarray(points, dtype=np.float64))
        d = np.hypot(points[:, 0] - self.center[0], points[:, 1] - self.center[1])
        return np.maximum(d - self.radius, 0.0)

    def contains(self, points: np.ndarray) -> np.ndarray:
        return self.distance(points) <= 0.0

    def ray_interval(self, origin: np.ndarray, directions: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Parameter interval [t_in, t_out] of each ray inside the disc.

        Rays are ``origin + t * directions`` with unnormalized planar directions;
        misses return t_in = +inf, t_out = -inf.
        """
        o = np.asarray(origin, dtype=np.float64)[:2] - np.asarray(self.center)
        d = np.asarray(directions, dtype=np.float64)
        a = np.einsum("ij,ij->i", d, d)
        b = 2.0 * (d @ o)
        c = float(o @ o) - self.radius**2

        t_in = np.full(len(d), np.inf)
        t_out = np.full(len(d), -np.inf)

        vertical = a < _EPS
        if c <= 0:
            t_in[vertical] = -np.inf
            t_out[vertical] = np.inf

        disc = b * b - 4.0 * a * c
        hit = (~vertical) & (disc >= 0)
        root = np.sqrt(np.where(hit, disc, 0.0))
        safe_a = np.where(hit, a, 1.0)
        t_in[hit] = ((-b - root) / (2.0 * safe_a))[hit]
        t_out[hit] = ((-b + root) / (2.0 * safe_a))[hit]
        return t_in, t_out

    def vertices(self) -> np.ndarray:
        return np.asarray([self.center])

    def to_dict(self) -> dict[str, Any]:
        return {"shape": "circle", "params": {"center": list(self.center), "radius": self.radius}}


@dataclass(frozen=True)
class ConvexPolygon:
    points: tuple[tuple[float, float], ...]

    def __post_init__(self) -> None:
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[0] < 3 or pts.shape[1] != 2:
            raise ValueError("polygon needs at least 3 vertices of (x, y)")

        area2 = _signed_area2(pts)
        if abs(area2) < _EPS:
            raise ValueError("polygon is degenerate (zero area)")
        if area2 < 0:
            pts = pts[::-1]

        edges = np.roll(pts, -1, axis=0) - pts
        nxt = np.roll(edges, -1, axis=0)
        cross = edges[:, 0] * nxt[:, 1] - edges[:, 1] * nxt[:, 0]
        if np.any(cross < -1e-9):
            raise ValueError("polygon is not convex")

        object.__setattr__(self, "points", tuple((float(x), float(y)) for x, y in pts))

    @classmethod
    def rectangle(
        cls,
        center: tuple[float, float],
        size: tuple[float, float],
        angle: float = 0.0,
    ) -> "ConvexPolygon":
        hx, hy = size[0] / 2.0, size[1] / 2.0
        corners = np.array([[-hx, -hy], [hx, -hy], [hx, hy], [-hx, hy]])
        c, s = np.cos(angle), np.sin(angle)
        rot = np.array([[c, -s], [s, c]])
        pts = corners @ rot.T + np.asarray(center, dtype=np.float64)
        return cls(tuple(map(tuple, pts)))

    @property
    def array(self) -> np.ndarray:
        return np.asarray(self.points, dtype=np.float64)

    def _edges(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        v = self.array
        e = np.roll(v, -1, axis=0) - v
        # outward normals of a CCW polygon
        n = np.stack([e[:, 1], -e[:, 0]], axis=1)
        return v, e, n

    def contains(self, points: np.ndarray) -> np.ndarray:
        points = np.atleast_2d(np.asarray(points, dtype=np.float64))
        v, _, n = self._edges()
        side = np.einsum("kj,nkj->nk", n, points[:, None, :] - v[None, :, :])
        return np.all(side <= 0.0, axis=1)

    def distance(self, points: np.ndarray) -> np.ndarray:
        """Distance from each point to the polygon (0 inside)."""
        points = np.atleast_2d(np.asarray(points, dtype=np.float64))
        v, e, _ = self._edges()
        rel = points[:, None, :] - v[None, :, :]
        ee = np.einsum("kj,kj->k", e, e)
        t = np.clip(np.einsum("nkj,kj->nk", rel, e) / ee, 0.0, 1.0)
        closest = v[None, :, :] + t[:, :, None] * e[None, :, :]
        d = np.min(np.linalg.norm(points[:, None, :] - closest, axis=2), axis=1)
        return np.where(self.contains(points), 0.0, d)

    def ray_interval(self, origin: np.ndarray, directions: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Cyrus-Beck clipping of each ray against the polygon."""
        o = np.asarray(origin, dtype=np.float64)[:2]
        d = np.asarray(directions, dtype=np.float64)
        v, _, n = self._edges()

        num = np.einsum("kj,kj->k", n, o[None, :] - v)  # (K,)
        den = d @ n.T  # (N, K)

        t_in = np.full(len(d), -np.inf)
        t_out = np.full(len(d), np.inf)
        parallel = np.abs(den) < _EPS
        miss = np.any(parallel & (num[None, :] > 0.0), axis=1)

        with np.errstate(divide="ignore", invalid="ignore"):
            t_hit = -num[None, :] / den
        entering = (den < 0) & ~parallel
        exiting = (den > 0) & ~parallel
        t_in = np.max(np.where(entering, t_hit, -np.inf), axis=1, initial=-np.inf)
        t_out = np.min(np.where(exiting, t_hit, np.inf), axis=1, initial=np.inf)

        empty = miss | (t_in > t_out)
        t_in = np.where(empty, np.inf, t_in)
        t_out = np.where(empty, -np.inf, t_out)
        return t_in, t_out

    def vertices(self) -> np.ndarray:
        return self.array

    def to_dict(self) -> dict[str, Any]:
        return {"shape": "polygon", "params": {"vertices": [list(p) for p in self.points]}}


Footprint = Union[Circle, ConvexPolygon]


def footprint_from_dict(data: dict[str, Any]) -> Footprint:
    shape = data.get("shape")
    params = data.get("params", {})
    if shape == "circle":
        return Circle(center=tuple(params["center"]), radius=params["radius"])
    if shape == "polygon":
        return ConvexPolygon(tuple(tuple(p) for p in params["vertices"]))
    raise ValueError(f"Unknown footprint shape: {shape!r}")


def wrap_angle(angle: Union[float, np.ndarray]) -> Union[float, np.ndarray]:
    """Wrap to (-pi, pi]."""
    wrapped = np.arctan2(np.sin(angle), np.cos(angle))
    return float(wrapped) if np.ndim(wrapped) == 0 else wrapped


def _signed_area2(pts: np.ndarray) -> float:
    x, y = pts[:, 0], pts[:, 1]
    return float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))
