"""Shared fixtures: small cameras, configs and hand-built worlds."""

from __future__ import annotations

import dataclasses

import numpy as np
import pytest

from pseudolaser_nav.config import CameraModel, Config, PolicyConfig, TrainerConfig
from pseudolaser_nav.world import AgentState, Obstacle, WorldState


@pytest.fixture
def camera() -> CameraModel:
    return CameraModel()


@pytest.fixture
def small_camera() -> CameraModel:
    return CameraModel(image_height=16, image_width=32)


@pytest.fixture
def small_config(small_camera: CameraModel) -> Config:
    """A config sized for fast tests: 32-beam laser, narrow network, short episodes."""
    return Config(
        camera=small_camera,
        policy=PolicyConfig(hidden_size=16, feature_size=8),
        trainer=TrainerConfig(batch_size=32, max_episode_steps=20, num_envs=2, lstm_unroll=5),
    )


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


def make_agent(x: float = 0.0, y: float = 0.0, heading: float = 0.0, goal=(5.0, 0.0), **kwargs) -> AgentState:
    return AgentState(position=(x, y), heading=heading, goal=goal, **kwargs)


def make_world(
    agents: list[AgentState],
    obstacles: list[Obstacle] = (),
    bounds=(-20.0, -20.0, 20.0, 20.0),
    dt: float = 0.1,
) -> WorldState:
    return WorldState(obstacles=list(obstacles), agents=list(agents), bounds=bounds, dt=dt)


def with_trainer(config: Config, **changes) -> Config:
    return config.replace(trainer=dataclasses.replace(config.trainer, **changes))
