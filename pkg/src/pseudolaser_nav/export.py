"""File outputs: trajectories, metric tables, laser CSVs and PGM images."""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from datetime import datetime
from pathlib import Path
from typing import Any, Iterable, Optional, Sequence, Union

import numpy as np

from pseudolaser_nav.env import EpisodeStatus, RewardBreakdown
from pseudolaser_nav.world import AgentState, Obstacle

logger = logging.getLogger(__name__)

TRAJECTORY_COLUMNS = (
    "t", "x", "y", "heading", "v", "w_normalized",
    "r_goal", "r_collision", "r_rotational", "reward", "status",
)


@dataclass
class EpisodeLog:
    """Everything needed to write one episode's trajectories and scene overlay."""

    scenario: str
    seed: int
    dt: float
    bounds: tuple[float, float, float, float]
    obstacles: list[Obstacle]
    states: list[list[AgentState]] = field(default_factory=list)
    rewards: list[dict[int, RewardBreakdown]] = field(default_factory=list)
    statuses: list[dict[int, EpisodeStatus]] = field(default_factory=list)

    @property
    def n_agents(self) -> int:
        return len(self.states[0]) if self.states else 0

    def agent_rows(self, index: int) -> list[list[Any]]:
        first = self.states[0][index]
        rows = [[0.0, first.position[0], first.position[1], first.heading,
                 first.linear_vel, first.w_normalized, 0.0, 0.0, 0.0, 0.0, EpisodeStatus.RUNNING.value]]
        for k, (rewards, statuses) in enumerate(zip(self.rewards, self.statuses), start=1):
            if index not in rewards:
                break
            s = self.states[k][index]
            r = rewards[index]
            rows.append([k * self.dt, s.position[0], s.position[1], s.heading, s.linear_vel,
                         s.w_normalized, r.r_goal, r.r_collision, r.r_rotational, r.total,
                         statuses[index].value])
        return rows


def _fmt(value: Any) -> str:
    return repr(float(value)) if isinstance(value, (float, np.floating)) else str(value)


def scene_dict(bounds: Sequence[float], obstacles: Iterable[Obstacle]) -> dict[str, Any]:
    return {"bounds": list(bounds), "obstacles": [o.to_dict() for o in obstacles]}


def export_trajectories(logs: Sequence[EpisodeLog], output_dir: Union[str, Path]) -> list[Path]:
    """One CSV per agent per episode plus a ``scene.json`` per episode.

    Floats are written with ``repr`` so they read back exactly.
    """
    written: list[Path] = []
    if not logs:
        return written
    output_dir = Path(output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)

    for e, log in enumerate(logs):
        episode_dir = output_dir / f"episode_{e:04d}"
        episode_dir.mkdir(parents=True, exist_ok=True)
        scene_path = episode_dir / "scene.json"
        payload = scene_dict(log.bounds, log.obstacles)
        payload.update({"scenario": log.scenario, "seed": log.seed, "dt": log.dt})
        scene_path.write_text(json.dumps(payload, indent=2), encoding="utf-8")
        written.append(scene_path)

        for i in range(log.n_agents):
            path = episode_dir / f"agent_{i}.csv"
            with open(path, "w", newline="", encoding="utf-8") as f:
                writer = csv.writer(f)
                writer.writerow(TRAJECTORY_COLUMNS)
                for row in log.agent_rows(i):
                    writer.writerow([_fmt(v) for v in row])
            written.append(path)

    logger.info(f"Exported {len(logs)} episode(s) to {output_dir}")
    return written


def read_trajectory(path: Union[str, Path]) -> list[dict[str, Any]]:
    with open(path, newline="", encoding="utf-8") as f:
        rows = list(csv.DictReader(f))
    return [
        {k: (v if k == "status" else float(v)) for k, v in row.items()}
        for row in rows
    ]


def write_matrix_csv(path: Union[str, Path], values: np.ndarray) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    values = np.atleast_2d(np.asarray(values, dtype=np.float64))
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        for row in values:
            writer.writerow([repr(float(v)) for v in row])
    return path


def read_laser_csv(path: Union[str, Path]) -> np.ndarray:
    """Read a laser vector written one row (or one value per line) of CSV."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Laser file not found: {path}")
    with open(path, newline="", encoding="utf-8") as f:
        values = [float(v) for row in csv.reader(f) for v in row if v.strip()]
    if not values:
        raise ValueError(f"{path} contains no values")
    return np.asarray(values, dtype=np.float64)


def write_pgm(path: Union[str, Path], image: np.ndarray, max_value: Optional[float] = None) -> Path:
    """Write a 2-D array as an 8-bit binary PGM, scaled by ``max_value``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 2:
        raise ValueError(f"PGM images must be 2-D, got shape {image.shape}")
    scale = max_value if max_value else (float(image.max()) or 1.0)
    pixels = np.clip(np.round(image / scale * 255.0), 0, 255).astype(np.uint8)
    h, w = pixels.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        f.write(pixels.tobytes())
    return path


def write_json(path: Union[str, Path], payload: Any) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2), encoding="utf-8")
    return path


def write_table_csv(path: Union[str, Path], header: Sequence[str], rows: Sequence[Sequence[Any]]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(header)
        writer.writerows(rows)
    return path


def format_table(header: Sequence[str], rows: Sequence[Sequence[Any]]) -> str:
    """Left-aligned plain-text table."""

    def cell(v: Any) -> str:
        if v is None:
            return "-"
        if isinstance(v, float):
            return f"{v:.3f}"
        return str(v)

    text = [[cell(v) for v in row] for row in rows]
    widths = [max(len(h), *(len(r[i]) for r in text)) if text else len(h) for i, h in enumerate(header)]
    lines = ["  ".join(h.ljust(w) for h, w in zip(header, widths))]
    lines.append("  ".join("-" * w for w in widths))
    lines.extend("  ".join(c.ljust(w) for c, w in zip(r, widths)) for r in text)
    return "\n".join(lines) + "\n"


def generate_output_path(output_dir: Optional[Path], stem: str, suffix: str) -> Path:
    """``<output_dir>/<stem>_<timestamp><suffix>``, defaulting to ./outputs."""
    output_dir = Path(output_dir) if output_dir else Path("outputs")
    safe = "".join(c if c.isalnum() or c in "-_" else "_" for c in stem)
    stamp = datetime.now().strftime("%Y-%m-%d_%H%M%S")
    return output_dir / f"{safe}_{stamp}{suffix}"
