"""Multi-agent navigation environment: observations, reward and episode lifecycle."""

from __future__ import annotations

import dataclasses
import logging
import math
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from typing import Mapping, Optional, Sequence, Union

import numpy as np

from pseudolaser_nav.config import Config, RewardConfig
from pseudolaser_nav.scenarios import ScenarioId, spawn_scenario
from pseudolaser_nav.sensing import Sensor
from pseudolaser_nav.world import (
    Action,
    AgentState,
    CollisionReport,
    WorldState,
    check_collision,
    step_kinematics,
)

__all__ = [
    "Action",
    "EpisodeFinishedError",
    "EpisodeStatus",
    "Frame",
    "NavigationEnv",
    "Observation",
    "RewardBreakdown",
    "assemble_observation",
    "compute_reward",
    "goal_polar",
]

logger = logging.getLogger(__name__)

HISTORY_LENGTH = 3


class EpisodeFinishedError(RuntimeError):
    """Raised when stepping an environment whose agents have all finished."""


class EpisodeStatus(str, Enum):
    RUNNING = "running"
    ARRIVED = "arrived"
    COLLIDED = "collided"
    TIMEOUT = "timeout"

    @property
    def finished(self) -> bool:
        return self is not EpisodeStatus.RUNNING


@dataclass(frozen=True)
class RewardBreakdown:
    r_goal: float
    r_collision: float
    r_rotational: float
    total: float = field(init=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "total", self.r_goal + self.r_collision + self.r_rotational)


@dataclass(frozen=True)
class Frame:
    """One timestep of sensing: laser, goal (distance, bearing), velocity (v, w_normalized)."""

    laser: np.ndarray
    goal: np.ndarray
    velocity: np.ndarray


@dataclass(frozen=True)
class Observation:
    lasers: np.ndarray
    goals: np.ndarray
    velocities: np.ndarray

    @property
    def d_laser(self) -> int:
        return self.lasers.shape[1]


def goal_polar(agent: AgentState) -> tuple[float, float]:
    """Goal in the agent frame as (distance, bearing); positive bearing is to the left."""
    dx = agent.goal[0] - agent.position[0]
    dy = agent.goal[1] - agent.position[1]
    c, s = math.cos(agent.heading), math.sin(agent.heading)
    local_x = c * dx + s * dy
    local_y = -s * dx + c * dy
    return math.hypot(dx, dy), math.atan2(local_y, local_x)


def compute_reward(
    prev: AgentState, curr: AgentState, events: CollisionReport, cfg: RewardConfig
) -> RewardBreakdown:
    d_prev = prev.distance_to_goal()
    d_curr = curr.distance_to_goal()
    if d_curr < cfg.goal_radius:
        r_goal = cfg.r_arrival
    else:
        r_goal = cfg.omega_g * (d_prev - d_curr)

    r_collision = cfg.r_collision if events.collided else 0.0

    w = abs(curr.w_normalized)
    r_rotational = cfg.omega_w * w if w > cfg.w_penalty_threshold else 0.0

    return RewardBreakdown(r_goal=r_goal, r_collision=r_collision, r_rotational=r_rotational)


def assemble_observation(history: Sequence[Frame]) -> Observation:
    """Stack the three most recent frames oldest-first, replicating the oldest."""
    if len(history) == 0:
        raise ValueError("cannot assemble an observation from an empty history")
    frames = list(history)[-HISTORY_LENGTH:]
    frames = [frames[0]] * (HISTORY_LENGTH - len(frames)) + frames
    return Observation(
        lasers=np.stack([f.laser for f in frames]),
        goals=np.stack([f.goal for f in frames]),
        velocities=np.stack([f.velocity for f in frames]),
    )


class NavigationEnv:
    """Shared-policy multi-agent environment over one spawned world.

    ``step`` takes one action per live agent and returns dictionaries keyed by
    agent index that cover exactly the agents live before the step. Agents
    that arrive or collide are frozen in place and stay visible to the others.
    """

    def __init__(
        self,
        config: Optional[Config] = None,
        sensor: Optional[Sensor] = None,
        augment: bool = False,
        n_agents: Optional[int] = None,
    ) -> None:
        self.config = config or Config()
        self.n_agents = n_agents
        self.sensor = sensor or Sensor(self.config.camera, self.config.sensing, self.config.noise)
        self.augment = augment
        self.max_steps = self.config.trainer.max_episode_steps

        self.world: Optional[WorldState] = None
        self.scenario: Optional[ScenarioId] = None
        self.steps = 0
        self.status: dict[int, EpisodeStatus] = {}
        self.trajectory: list[list[AgentState]] = []
        self._history: dict[int, deque[Frame]] = {}
        self._rng = np.random.default_rng(0)

    @property
    def live_agents(self) -> list[int]:
        return [i for i, s in self.status.items() if not s.finished]

    @property
    def finished(self) -> bool:
        return self.world is not None and not self.live_agents

    def _frame(self, index: int) -> Frame:
        agent = self.world.agents[index]
        laser = self.sensor.measure(self.world, index, self._rng, augment=self.augment)
        return Frame(
            laser=laser.ranges,
            goal=np.asarray(goal_polar(agent), dtype=np.float64),
            velocity=np.array([agent.linear_vel, agent.w_normalized], dtype=np.float64),
        )

    def reset(
        self,
        scenario: Union[str, ScenarioId],
        seed: int,
        n_agents: Optional[int] = None,
    ) -> dict[int, Observation]:
        sid = ScenarioId.parse(scenario)
        world = spawn_scenario(sid, seed, self.config.world, n_agents or self.n_agents)
        return self.start(world, sid, seed)

    def start(
        self, world: WorldState, scenario: Union[str, ScenarioId], seed: int = 0
    ) -> dict[int, Observation]:
        """Begin an episode from an already-built world."""
        self.scenario = ScenarioId.parse(scenario)
        self.world = world
        self._rng = np.random.default_rng(seed)
        self.steps = 0
        n = len(self.world.agents)
        self.status = {i: EpisodeStatus.RUNNING for i in range(n)}
        self.trajectory = [list(self.world.agents)]
        self._history = {i: deque([self._frame(i)], maxlen=HISTORY_LENGTH) for i in range(n)}
        logger.debug(f"Reset '{self.scenario}' (seed {seed}) with {n} agents")
        return {i: assemble_observation(self._history[i]) for i in range(n)}

    def retarget(self, index: int, goal: tuple[float, float]) -> Observation:
        """Give an arrived agent a new goal and restart its step budget."""
        if self.world is None:
            raise EpisodeFinishedError("reset() must be called before retarget()")
        self.world.agents[index] = dataclasses.replace(self.world.agents[index], goal=tuple(goal))
        self.status[index] = EpisodeStatus.RUNNING
        self.steps = 0
        self._history[index].append(self._frame(index))
        return assemble_observation(self._history[index])

    def step(
        self, actions: Mapping[int, Action]
    ) -> tuple[dict[int, Observation], dict[int, RewardBreakdown], dict[int, EpisodeStatus]]:
        if self.world is None:
            raise EpisodeFinishedError("reset() must be called before step()")
        live = self.live_agents
        if not live:
            raise EpisodeFinishedError(f"episode in '{self.scenario}' has already finished")
        if set(actions) != set(live):
            raise ValueError(
                f"expected actions for live agents {sorted(live)}, got {sorted(actions)}"
            )

        world = self.world
        dt = world.dt
        previous = {i: world.agents[i] for i in live}
        for i in live:
            world.agents[i] = step_kinematics(previous[i], actions[i].clamped(), dt)
        world.time += dt
        self.steps += 1

        reward_cfg = self.config.reward
        rewards: dict[int, RewardBreakdown] = {}
        status: dict[int, EpisodeStatus] = {}
        for i in live:
            report = check_collision(world, i)
            rewards[i] = compute_reward(previous[i], world.agents[i], report, reward_cfg)
            if report.collided:
                status[i] = EpisodeStatus.COLLIDED
            elif world.agents[i].distance_to_goal() < reward_cfg.goal_radius:
                status[i] = EpisodeStatus.ARRIVED
            elif self.steps >= self.max_steps:
                status[i] = EpisodeStatus.TIMEOUT
            else:
                status[i] = EpisodeStatus.RUNNING

        observations = {}
        for i in live:
            self._history[i].append(self._frame(i))
            observations[i] = assemble_observation(self._history[i])
        self.status.update(status)
        self.trajectory.append(list(world.agents))

        for i, s in status.items():
            if s.finished:
                logger.debug(f"Agent {i} {s.value} at step {self.steps}")
        return observations, rewards, status
