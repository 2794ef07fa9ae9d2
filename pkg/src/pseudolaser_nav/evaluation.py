"""Policy evaluation: metrics, controllers, ablation tables and the limitation sweep."""

from __future__ import annotations

import dataclasses
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Mapping, Optional, Protocol, Sequence, Union

import numpy as np
import torch

from pseudolaser_nav.config import Config, SensingConfig
from pseudolaser_nav.env import EpisodeStatus, NavigationEnv, Observation
from pseudolaser_nav.export import EpisodeLog
from pseudolaser_nav.network import ActorCritic, Hidden, observation_tensors, to_action
from pseudolaser_nav.scenarios import ScenarioId, build_scene
from pseudolaser_nav.world import Action, AgentState, WorldState

logger = logging.getLogger(__name__)


class MissingCheckpointError(FileNotFoundError):
    """Raised when an evaluation needs a checkpoint that does not exist."""


@dataclass(frozen=True)
class TrialOutcome:
    trial: int
    seed: int
    agent: int
    status: EpisodeStatus
    time: float


@dataclass(frozen=True)
class Metrics:
    n_trials: int
    n_success: int
    n_collision: int
    n_timeout: int
    average_time: Optional[float]

    @property
    def success_rate(self) -> float:
        return self.n_success / self.n_trials if self.n_trials else 0.0

    @classmethod
    def from_outcomes(cls, outcomes: Sequence[TrialOutcome]) -> "Metrics":
        times = [o.time for o in outcomes if o.status is EpisodeStatus.ARRIVED]
        return cls(
            n_trials=len(outcomes),
            n_success=len(times),
            n_collision=sum(o.status is EpisodeStatus.COLLIDED for o in outcomes),
            n_timeout=sum(o.status is EpisodeStatus.TIMEOUT for o in outcomes),
            average_time=float(np.mean(times)) if times else None,
        )

    def to_dict(self) -> dict:
        data = dataclasses.asdict(self)
        data["success_rate"] = self.success_rate
        return data


class Controller(Protocol):
    def reset(self, n_agents: int) -> None: ...

    def act(self, observations: Mapping[int, Observation]) -> dict[int, Action]: ...


class ConstantController:
    """Issues the same command to every agent."""

    def __init__(self, action: Action) -> None:
        self.action = action

    def reset(self, n_agents: int) -> None:
        pass

    def act(self, observations: Mapping[int, Observation]) -> dict[int, Action]:
        return {i: self.action for i in observations}


class GoalSeekingController:
    """Turn toward the goal bearing, slowing down for large heading errors."""

    def __init__(self, speed: float = 1.0, gain: float = 2.0) -> None:
        self.speed = speed
        self.gain = gain

    def reset(self, n_agents: int) -> None:
        pass

    def act(self, observations: Mapping[int, Observation]) -> dict[int, Action]:
        actions = {}
        for i, obs in observations.items():
            distance, bearing = obs.goals[-1]
            w = float(np.clip(self.gain * bearing / (math.pi / 2), -1.0, 1.0))
            v = self.speed * max(0.0, math.cos(bearing)) * min(1.0, distance / 0.5)
            actions[i] = Action(v=min(v, 1.0), w_normalized=w)
        return actions


class PolicyController:
    """Deterministic policy-mean controller with per-agent LSTM state.

    The model is loaded lazily from ``checkpoint`` on first use unless one is
    passed in directly.
    """

    def __init__(
        self,
        checkpoint: Optional[Union[str, Path]] = None,
        config: Optional[Config] = None,
        model: Optional[ActorCritic] = None,
    ) -> None:
        if checkpoint is None and model is None:
            raise ValueError("PolicyController needs a checkpoint or a model")
        self.checkpoint = Path(checkpoint) if checkpoint is not None else None
        self.config = config
        self._model = model
        self._hidden: dict[int, Hidden] = {}
        self.last_mask: Optional[dict[int, np.ndarray]] = None

    @property
    def model(self) -> ActorCritic:
        if self._model is None:
            self._model = self._load_model()
        return self._model

    def _load_model(self) -> ActorCritic:
        from pseudolaser_nav.trainer import load_model

        if not self.checkpoint.exists():
            raise MissingCheckpointError(f"Checkpoint not found: {self.checkpoint}")
        logger.info(f"Loading policy from {self.checkpoint}")
        model, saved = load_model(self.checkpoint, self.config)
        if self.config is None:
            self.config = saved
        return model

    def load(self) -> ActorCritic:
        return self.model

    def reset(self, n_agents: int) -> None:
        h, c = self.model.initial_hidden(n_agents)
        self._hidden = {i: (h[i : i + 1], c[i : i + 1]) for i in range(n_agents)}

    def act(self, observations: Mapping[int, Observation]) -> dict[int, Action]:
        agents = sorted(observations)
        hidden = (
            torch.cat([self._hidden[i][0] for i in agents]),
            torch.cat([self._hidden[i][1] for i in agents]),
        )
        with torch.no_grad():
            out = self.model(*observation_tensors([observations[i] for i in agents]), hidden)
        squashed = out.distribution().mode()
        actions = {}
        for k, i in enumerate(agents):
            self._hidden[i] = (out.hidden[0][k : k + 1], out.hidden[1][k : k + 1])
            actions[i] = to_action(squashed[k])
        self.last_mask = (
            {i: out.mask[k].numpy().copy() for k, i in enumerate(agents)}
            if out.mask is not None else None
        )
        return actions

    def unload(self) -> None:
        if self._model is not None:
            self._model = None
            logger.info("Policy unloaded")


def play_episode(
    env: NavigationEnv,
    controller: Controller,
    scenario: Union[str, ScenarioId],
    seed: int,
    world: Optional[WorldState] = None,
    on_first_step: Optional[Callable[[Controller], None]] = None,
) -> EpisodeLog:
    """Run one episode to completion and return its log."""
    observations = env.start(world, scenario, seed) if world is not None else env.reset(scenario, seed)
    controller.reset(len(observations))
    log = EpisodeLog(
        scenario=str(scenario), seed=seed, dt=env.world.dt, bounds=env.world.bounds,
        obstacles=list(env.world.obstacles), states=[list(env.world.agents)],
    )
    first = True
    while not env.finished:
        live = env.live_agents
        actions = controller.act({i: observations[i] for i in live})
        if first and on_first_step is not None:
            on_first_step(controller)
        first = False
        next_obs, rewards, status = env.step(actions)
        observations.update(next_obs)
        log.states.append(list(env.world.agents))
        log.rewards.append(rewards)
        log.statuses.append(status)
    return log


def episode_outcomes(log: EpisodeLog, trial: int) -> list[TrialOutcome]:
    outcomes = []
    for i in range(log.n_agents):
        steps = [k for k, statuses in enumerate(log.statuses, start=1) if i in statuses]
        last = steps[-1]
        outcomes.append(
            TrialOutcome(trial, log.seed, i, log.statuses[last - 1][i], last * log.dt)
        )
    return outcomes


def run_eval(
    controller: Union[Controller, str, Path],
    scenario: Union[str, ScenarioId],
    n_trials: int,
    seed: int,
    config: Optional[Config] = None,
    on_trial: Optional[Callable[[int, list[TrialOutcome]], None]] = None,
    logs: Optional[list[EpisodeLog]] = None,
    on_first_step: Optional[Callable[[Controller], None]] = None,
) -> Metrics:
    """Evaluate ``n_trials`` seeded episodes; each agent-episode counts as one trial.

    A checkpoint path may be passed instead of a controller; its hash must
    match ``config`` when one is given.
    """
    if isinstance(controller, (str, Path)):
        controller = PolicyController(controller, config)
        controller.load()
        config = config or controller.config
    config = config or Config()
    env = NavigationEnv(config, augment=False)

    outcomes: list[TrialOutcome] = []
    for trial in range(n_trials):
        log = play_episode(env, controller, scenario, seed + trial, on_first_step=on_first_step)
        trial_outcomes = episode_outcomes(log, trial)
        outcomes.extend(trial_outcomes)
        if logs is not None:
            logs.append(log)
        if on_trial is not None:
            on_trial(trial, trial_outcomes)
        logger.info(
            f"Trial {trial + 1}/{n_trials} '{scenario}': "
            + ", ".join(o.status.value for o in trial_outcomes)
        )
    return Metrics.from_outcomes(outcomes)


@dataclass(frozen=True)
class AblationSpec:
    architecture: str = "lstm_feg"
    fov: int = 90
    sensing: str = "depth_minpool_semantic"
    augmentation: bool = True

    def __post_init__(self) -> None:
        if self.fov not in (90, 180):
            raise ValueError(f"fov must be 90 or 180 degrees, got {self.fov}")
        SensingConfig(mode=self.sensing)

    @property
    def label(self) -> str:
        aug = "aug" if self.augmentation else "noaug"
        return f"{self.architecture}-{self.fov}-{self.sensing}-{aug}"

    def checkpoint_name(self) -> str:
        aug = "" if self.augmentation else "_noaug"
        return f"{self.architecture}_fov{self.fov}{aug}.pt"

    def apply(self, config: Config) -> Config:
        """Config for this ablation cell: camera FOV, architecture and sensing variant."""
        camera = dataclasses.replace(
            config.camera,
            horizontal_fov=math.radians(self.fov),
            projection="cylindrical" if self.fov >= 180 else config.camera.projection,
        )
        return config.replace(
            camera=camera,
            policy=dataclasses.replace(config.policy, architecture=self.architecture),
            sensing=dataclasses.replace(config.sensing, mode=self.sensing),
        )


@dataclass(frozen=True)
class AblationRow:
    spec: AblationSpec
    scenario: str
    metrics: Metrics


ABLATION_HEADER = (
    "architecture", "fov", "sensing", "augmentation", "scenario",
    "n_trials", "n_success", "n_collision", "n_timeout", "success_rate", "average_time",
)


def ablation_rows(rows: Sequence[AblationRow]) -> list[list]:
    return [
        [r.spec.architecture, r.spec.fov, r.spec.sensing, r.spec.augmentation, r.scenario,
         r.metrics.n_trials, r.metrics.n_success, r.metrics.n_collision, r.metrics.n_timeout,
         r.metrics.success_rate, r.metrics.average_time]
        for r in rows
    ]


def run_ablation(
    specs: Sequence[AblationSpec],
    scenarios: Sequence[str],
    n_trials: int,
    config: Config,
    checkpoint_dir: Optional[Union[str, Path]] = None,
    controller_factory: Optional[Callable[[AblationSpec, Config], Controller]] = None,
    seed: Optional[int] = None,
) -> list[AblationRow]:
    """Cross product of specs and scenarios, one Metrics per cell."""
    seed = config.eval.seed if seed is None else seed
    rows: list[AblationRow] = []
    for spec in specs:
        spec_config = spec.apply(config)
        if controller_factory is not None:
            controller = controller_factory(spec, spec_config)
        else:
            if checkpoint_dir is None:
                raise ValueError("run_ablation needs checkpoint_dir or controller_factory")
            path = Path(checkpoint_dir) / spec.checkpoint_name()
            if not path.exists():
                raise MissingCheckpointError(f"No checkpoint for {spec.label}: {path}")
            controller = PolicyController(path, spec_config)
        for scenario in scenarios:
            metrics = run_eval(controller, scenario, n_trials, seed, spec_config)
            rows.append(AblationRow(spec, scenario, metrics))
            logger.info(f"{spec.label} on '{scenario}': success {metrics.success_rate:.2f}")
    return rows


def angular_occupancy(width: float, distance: float, offset: float, horizontal_fov: float) -> float:
    """Fraction of the horizontal FOV covered by the wall's near face."""
    half = horizontal_fov / 2
    lo = max(math.atan2(offset - width / 2, distance), -half)
    hi = min(math.atan2(offset + width / 2, distance), half)
    return max(hi - lo, 0.0) / horizontal_fov


@dataclass(frozen=True)
class SweepCell:
    width: float
    distance: float
    offset: float
    occupancy: float
    normalized_distance: float
    metrics: Metrics


def run_limitation_sweep(
    controller: Union[Controller, str, Path],
    wall_widths: Sequence[float],
    distances: Sequence[float],
    config: Optional[Config] = None,
    n_trials: int = 10,
    offset: float = 0.0,
    seed: Optional[int] = None,
) -> list[SweepCell]:
    """Wall-in-front trials over a width x distance grid.

    A checkpoint path is loaded once; without ``config`` the checkpoint's own
    config is used.
    """
    if isinstance(controller, (str, Path)):
        controller = PolicyController(controller, config)
        controller.load()
        config = config or controller.config
    config = config or Config()
    seed = config.eval.seed if seed is None else seed
    cells = []
    for distance in distances:
        for width in wall_widths:
            scenario = f"limitation_wall:{width}:{distance}:{offset}"
            metrics = run_eval(controller, scenario, n_trials, seed, config)
            cells.append(
                SweepCell(
                    width=width,
                    distance=distance,
                    offset=offset,
                    occupancy=angular_occupancy(width, distance, offset, config.camera.horizontal_fov),
                    normalized_distance=distance / config.camera.max_range,
                    metrics=metrics,
                )
            )
    return cells


SWEEP_HEADER = (
    "width", "distance", "offset", "occupancy", "normalized_distance",
    "n_trials", "n_success", "n_collision", "success_rate",
)


def sweep_rows(cells: Sequence[SweepCell]) -> list[list]:
    return [
        [c.width, c.distance, c.offset, c.occupancy, c.normalized_distance,
         c.metrics.n_trials, c.metrics.n_success, c.metrics.n_collision, c.metrics.success_rate]
        for c in cells
    ]


def run_waypoint_loop(
    controller: Controller,
    n_laps: int,
    config: Optional[Config] = None,
    seed: Optional[int] = None,
    scenario: str = "stage3_corridor",
) -> Metrics:
    """Drive one agent around the scene's waypoints; every leg is one trial.

    After a failed leg the agent is placed on that leg's target waypoint and
    continues from there.
    """
    config = config or Config()
    seed = config.eval.seed if seed is None else seed
    scene = build_scene(scenario, seed)
    waypoints = scene.waypoints
    if len(waypoints) < 2:
        raise ValueError(f"scenario '{scenario}' defines no waypoint loop")
    env = NavigationEnv(config, augment=False)
    world_cfg = config.world

    def place(at: int) -> dict[int, Observation]:
        start, goal = waypoints[at % len(waypoints)], waypoints[(at + 1) % len(waypoints)]
        agent = AgentState(
            position=tuple(start),
            heading=math.atan2(goal[1] - start[1], goal[0] - start[0]),
            goal=tuple(goal),
            radius=world_cfg.agent_radius,
            camera_height=world_cfg.camera_height,
            height=world_cfg.agent_height,
        )
        world = WorldState(list(scene.obstacles), [agent], scene.bounds, dt=world_cfg.dt)
        controller.reset(1)
        return env.start(world, scenario, seed + at)

    outcomes: list[TrialOutcome] = []
    observations = place(0)
    for leg in range(n_laps * len(waypoints)):
        while not env.finished:
            next_obs, _, _ = env.step(controller.act(observations))
            observations.update(next_obs)
        result = env.status[0]
        outcomes.append(TrialOutcome(leg, seed, 0, result, env.steps * world_cfg.dt))
        logger.info(f"Waypoint leg {leg + 1}: {result.value}")
        if result is EpisodeStatus.ARRIVED:
            observations[0] = env.retarget(0, waypoints[(leg + 2) % len(waypoints)])
        else:
            observations = place(leg + 1)
    return Metrics.from_outcomes(outcomes)
