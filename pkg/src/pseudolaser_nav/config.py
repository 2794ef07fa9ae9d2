"""Configuration dataclasses and the single JSON config file."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Optional, Union

ARCHITECTURES = ("cnn", "lstm", "lstm_feg")
PROJECTIONS = ("pinhole", "cylindrical")


@dataclass(frozen=True)
class CameraModel:
    horizontal_fov: float = math.pi / 2
    vertical_fov: float = math.pi / 3
    image_height: int = 48
    image_width: int = 96
    max_range: float = 6.0
    projection: str = "pinhole"

    def __post_init__(self) -> None:
        if not 0 < self.horizontal_fov <= math.pi:
            raise ValueError(f"horizontal_fov must be in (0, pi], got {self.horizontal_fov}")
        if not 0 < self.vertical_fov < math.pi:
            raise ValueError(f"vertical_fov must be in (0, pi), got {self.vertical_fov}")
        if self.image_height < 8 or self.image_width < 8:
            raise ValueError(
                f"image size must be at least 8x8, got {self.image_height}x{self.image_width}"
            )
        if self.image_height % 2:
            raise ValueError(f"image_height must be even, got {self.image_height}")
        if self.max_range <= 0:
            raise ValueError(f"max_range must be positive, got {self.max_range}")
        if self.projection not in PROJECTIONS:
            raise ValueError(f"projection must be one of {PROJECTIONS}, got {self.projection!r}")
        if self.projection == "pinhole" and self.horizontal_fov >= math.pi:
            raise ValueError("a pinhole camera cannot cover 180 degrees; use projection='cylindrical'")

    @property
    def image_size(self) -> tuple[int, int]:
        return (self.image_height, self.image_width)


@dataclass(frozen=True)
class WorldConfig:
    agent_radius: float = 0.3
    camera_height: float = 0.3
    agent_height: float = 0.5
    dt: float = 0.1
    max_spawn_attempts: int = 1000

    def __post_init__(self) -> None:
        if self.agent_radius <= 0:
            raise ValueError(f"agent_radius must be positive, got {self.agent_radius}")
        if self.camera_height <= 0:
            raise ValueError(f"camera_height must be positive, got {self.camera_height}")
        if self.dt <= 0:
            raise ValueError(f"dt must be positive, got {self.dt}")


SENSING_MODES = (
    "ideal_laser_bottom",
    "ideal_laser_top",
    "depth_1d_slice",
    "depth_minpool",
    "depth_1d_semantic",
    "depth_minpool_semantic",
    "depth_minpool_semantic_noise",
)


@dataclass(frozen=True)
class SensingConfig:
    mode: str = "depth_minpool_semantic"
    slice_row: Optional[int] = None
    bottom_laser_height: float = 0.05
    top_laser_height: float = 0.45

    def __post_init__(self) -> None:
        if self.mode not in SENSING_MODES:
            raise ValueError(f"sensing mode must be one of {SENSING_MODES}, got {self.mode!r}")
        if self.bottom_laser_height <= 0 or self.top_laser_height <= 0:
            raise ValueError("laser heights must be positive")


@dataclass(frozen=True)
class NoiseParams:
    junction_threshold: float = 0.5
    neighborhood_halfwidth: int = 4
    gaussian_scale: float = 0.07
    enabled: bool = True

    def __post_init__(self) -> None:
        if self.junction_threshold <= 0:
            raise ValueError(f"junction_threshold must be positive, got {self.junction_threshold}")
        if self.neighborhood_halfwidth < 1:
            raise ValueError(
                f"neighborhood_halfwidth must be >= 1, got {self.neighborhood_halfwidth}"
            )
        if self.gaussian_scale < 0:
            raise ValueError(f"gaussian_scale must be >= 0, got {self.gaussian_scale}")


@dataclass(frozen=True)
class RewardConfig:
    r_arrival: float = 15.0
    omega_g: float = 2.5
    r_collision: float = -15.0
    omega_w: float = -0.1
    goal_radius: float = 0.1
    w_penalty_threshold: float = 0.7


@dataclass(frozen=True)
class PolicyConfig:
    architecture: str = "lstm_feg"
    hidden_size: int = 256
    feature_size: int = 128
    log_std_init: float = -0.5

    def __post_init__(self) -> None:
        if self.architecture not in ARCHITECTURES:
            raise ValueError(
                f"architecture must be one of {ARCHITECTURES}, got {self.architecture!r}"
            )


@dataclass(frozen=True)
class TrainerConfig:
    batch_size: int = 1024
    max_episode_steps: int = 150
    total_episodes: int = 30_000
    gamma: float = 0.99
    learning_rate: float = 5e-5
    lstm_unroll: int = 20
    kl_penalty_coeff: float = 15e-4
    gae_lambda: float = 0.95
    epochs_per_batch: int = 4
    entropy_coeff: float = 0.005
    value_coeff: float = 0.5
    clip_ratio: float = 0.2
    use_clip: bool = True
    use_kl_penalty: bool = True
    max_grad_norm: float = 0.5
    num_envs: int = 4
    agents_per_env: Optional[int] = None
    num_workers: int = 1
    seed: int = 0
    checkpoint_every: int = 50
    stages: tuple[str, ...] = ("stage1_open", "stage2_crossing", "stage3_corridor")
    promotion_window: int = 200
    promotion_threshold: float = 0.9
    alternate_prob: float = 0.2
    augment: bool = True
    target_update_ratio: float = 0.01

    def __post_init__(self) -> None:
        if not 0 < self.gamma < 1:
            raise ValueError(f"gamma must be in (0, 1), got {self.gamma}")
        if not 0 <= self.gae_lambda <= 1:
            raise ValueError(f"gae_lambda must be in [0, 1], got {self.gae_lambda}")
        for name in (
            "batch_size", "max_episode_steps", "total_episodes", "lstm_unroll",
            "epochs_per_batch", "num_envs", "num_workers", "promotion_window",
        ):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if self.learning_rate <= 0:
            raise ValueError(f"learning_rate must be positive, got {self.learning_rate}")
        if not self.stages:
            raise ValueError("stages must not be empty")
        # JSON gives lists; keep the dataclass hashable
        object.__setattr__(self, "stages", tuple(self.stages))


@dataclass(frozen=True)
class EvalConfig:
    n_trials: int = 100
    n_trials_single_obstacle: int = 50
    n_waypoint_laps: int = 20
    seed: int = 10_000


@dataclass(frozen=True)
class Config:
    """Everything the program reads from the single JSON config file."""

    camera: CameraModel = field(default_factory=CameraModel)
    world: WorldConfig = field(default_factory=WorldConfig)
    sensing: SensingConfig = field(default_factory=SensingConfig)
    noise: NoiseParams = field(default_factory=NoiseParams)
    reward: RewardConfig = field(default_factory=RewardConfig)
    policy: PolicyConfig = field(default_factory=PolicyConfig)
    trainer: TrainerConfig = field(default_factory=TrainerConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    @property
    def d_laser(self) -> int:
        return self.camera.image_width

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "Config":
        sections = {f.name: f for f in fields(cls)}
        unknown = set(data) - set(sections)
        if unknown:
            raise ValueError(f"Unknown config sections: {sorted(unknown)}")

        kwargs = {}
        for name, section in data.items():
            section_cls = _SECTION_TYPES[name]
            allowed = {f.name for f in fields(section_cls)}
            bad = set(section) - allowed
            if bad:
                raise ValueError(f"Unknown keys in config section '{name}': {sorted(bad)}")
            kwargs[name] = section_cls(**section)
        return cls(**kwargs)

    @classmethod
    def from_json(cls, path: Union[str, Path]) -> "Config":
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(f"Config file not found: {path}")
        return cls.from_dict(json.loads(path.read_text(encoding="utf-8")))

    def to_dict(self) -> dict[str, Any]:
        data = asdict(self)
        data["trainer"]["stages"] = list(self.trainer.stages)
        return data

    def policy_hash(self) -> str:
        """Hash of the sections that fix the network's inputs and shapes."""
        relevant = {key: self.to_dict()[key] for key in ("camera", "world", "policy")}
        canonical = json.dumps(relevant, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()

    def replace(self, **sections: Any) -> "Config":
        return dataclasses.replace(self, **sections)


_SECTION_TYPES: dict[str, type] = {
    "camera": CameraModel,
    "world": WorldConfig,
    "sensing": SensingConfig,
    "noise": NoiseParams,
    "reward": RewardConfig,
    "policy": PolicyConfig,
    "trainer": TrainerConfig,
    "eval": EvalConfig,
}


def load_config(path: Optional[Union[str, Path]] = None) -> Config:
    if path is None:
        return Config()
    return Config.from_json(path)
