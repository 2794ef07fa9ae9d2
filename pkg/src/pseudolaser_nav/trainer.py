"""PPO training: rollout collection, GAE, clipped/KL-penalised updates, curriculum and checkpoints."""

from __future__ import annotations

import copy
import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Callable, Optional, Protocol, Sequence, Union

import numpy as np
import torch

from pseudolaser_nav.config import Config, TrainerConfig
from pseudolaser_nav.env import EpisodeStatus, NavigationEnv, Observation
from pseudolaser_nav.network import (
    DTYPE,
    ActorCritic,
    Hidden,
    NumericalError,
    SquashedGaussian,
    observation_tensors,
    parameter_count,
    to_action,
)

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT_VERSION = 1


class CheckpointError(RuntimeError):
    """Raised when a checkpoint's format or config hash does not match."""


class EnvLike(Protocol):
    live_agents: list[int]
    finished: bool

    def reset(self, scenario: Any, seed: int) -> dict[int, Observation]: ...

    def step(self, actions: dict) -> tuple[dict, dict, dict]: ...


@dataclass
class Transition:
    observation: Observation
    u: np.ndarray
    log_prob: float
    value: float
    old_mean: np.ndarray
    old_log_std: np.ndarray
    reward: float = 0.0
    advantage: float = 0.0
    ret: float = 0.0


@dataclass
class AgentTrace:
    """One agent's experience over one episode."""

    scenario: str
    transitions: list[Transition] = field(default_factory=list)
    hiddens: list[Hidden] = field(default_factory=list)
    status: EpisodeStatus = EpisodeStatus.RUNNING
    bootstrap_value: float = 0.0

    @property
    def total_reward(self) -> float:
        return float(sum(t.reward for t in self.transitions))

    @property
    def arrived(self) -> bool:
        return self.status is EpisodeStatus.ARRIVED


@dataclass
class Chunk:
    """At most ``lstm_unroll`` consecutive transitions of one trace."""

    transitions: list[Transition]
    initial_hidden: Hidden

    def __len__(self) -> int:
        return len(self.transitions)


@dataclass
class RolloutBuffer:
    traces: list[AgentTrace] = field(default_factory=list)
    stage_index: list[Optional[int]] = field(default_factory=list)

    @property
    def n_transitions(self) -> int:
        return sum(len(t.transitions) for t in self.traces)

    def transitions(self) -> list[Transition]:
        return [tr for trace in self.traces for tr in trace.transitions]

    def chunks(self, unroll: int) -> list[Chunk]:
        out = []
        for trace in self.traces:
            for start in range(0, len(trace.transitions), unroll):
                out.append(
                    Chunk(trace.transitions[start : start + unroll], trace.hiddens[start])
                )
        return out


@dataclass
class TrainStats:
    mean_episode_reward: float = 0.0
    success_rate: float = 0.0
    policy_loss: float = 0.0
    value_loss: float = 0.0
    kl: float = 0.0
    entropy: float = 0.0
    wall_clock: float = 0.0
    episodes: int = 0
    transitions: int = 0
    stage: str = ""
    aborted: bool = False
    value_losses: list[float] = field(default_factory=list)

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


def run_episode(
    env: EnvLike,
    model: ActorCritic,
    scenario: Any,
    seed: int,
    generator: torch.Generator,
) -> list[AgentTrace]:
    """Play one episode with the stochastic policy, recording every transition."""
    observations = env.reset(scenario, seed)
    agents = sorted(observations)
    traces = {i: AgentTrace(scenario=str(scenario)) for i in agents}
    h, c = model.initial_hidden(len(agents))
    hidden = {i: (h[k : k + 1], c[k : k + 1]) for k, i in enumerate(agents)}

    with torch.no_grad():
        while not env.finished:
            live = sorted(env.live_agents)
            batch_hidden = (
                torch.cat([hidden[i][0] for i in live]),
                torch.cat([hidden[i][1] for i in live]),
            )
            out = model(*observation_tensors([observations[i] for i in live]), batch_hidden)
            dist = SquashedGaussian(out.mean, out.log_std)
            u = dist.sample(generator)
            log_prob = dist.log_prob(u)
            squashed = dist.squash(u)

            actions = {}
            for k, i in enumerate(live):
                traces[i].hiddens.append(hidden[i])
                traces[i].transitions.append(
                    Transition(
                        observation=observations[i],
                        u=u[k].numpy().copy(),
                        log_prob=float(log_prob[k]),
                        value=float(out.value[k]),
                        old_mean=out.mean[k].numpy().copy(),
                        old_log_std=out.log_std[k].numpy().copy(),
                    )
                )
                actions[i] = to_action(squashed[k])
                hidden[i] = (out.hidden[0][k : k + 1], out.hidden[1][k : k + 1])

            next_obs, rewards, status = env.step(actions)
            for i in live:
                traces[i].transitions[-1].reward = rewards[i].total
                traces[i].status = status[i]
                observations[i] = next_obs[i]

            timed_out = [i for i in live if status[i] is EpisodeStatus.TIMEOUT]
            if timed_out:
                tail = model(
                    *observation_tensors([observations[i] for i in timed_out]),
                    (torch.cat([hidden[i][0] for i in timed_out]),
                     torch.cat([hidden[i][1] for i in timed_out])),
                )
                for k, i in enumerate(timed_out):
                    traces[i].bootstrap_value = float(tail.value[k])

    return [traces[i] for i in agents]


def collect_rollouts(
    envs: Sequence[EnvLike],
    model: ActorCritic,
    cfg: TrainerConfig,
    next_episode: Callable[[int], tuple[Any, int, Optional[int]]],
    generators: Sequence[torch.Generator],
    executor: Optional[ThreadPoolExecutor] = None,
) -> RolloutBuffer:
    """Gather whole episodes until at least ``batch_size`` transitions.

    Episodes run in rounds of one per environment; ``next_episode(env_index)``
    returns (scenario, seed, stage index). Results are merged in environment
    order so the buffer does not depend on thread scheduling.
    """
    if not envs:
        raise ValueError("collect_rollouts needs at least one environment")
    buffer = RolloutBuffer()

    def work(index: int, scenario: Any, seed: int) -> list[AgentTrace]:
        try:
            return run_episode(envs[index], model, scenario, seed, generators[index])
        except Exception as exc:
            raise RuntimeError(
                f"environment {index} failed on scenario '{scenario}' (seed {seed}): {exc}"
            ) from exc

    while buffer.n_transitions < cfg.batch_size:
        specs = [next_episode(i) for i in range(len(envs))]
        if executor is not None:
            futures = [executor.submit(work, i, s, seed) for i, (s, seed, _) in enumerate(specs)]
            results = [f.result() for f in futures]
        else:
            results = [work(i, s, seed) for i, (s, seed, _) in enumerate(specs)]
        for (_, _, stage), traces in zip(specs, results):
            for trace in traces:
                buffer.traces.append(trace)
                buffer.stage_index.append(stage)
    return buffer


def gae(
    rewards: Sequence[float],
    values: Sequence[float],
    bootstrap_value: float,
    gamma: float,
    lam: float,
) -> np.ndarray:
    """Generalised advantage estimates for one trajectory.

    ``bootstrap_value`` is V of the state after the last step: 0 for terminal
    outcomes, the critic's estimate for truncated ones.
    """
    n = len(rewards)
    advantages = np.zeros(n, dtype=np.float64)
    next_value = bootstrap_value
    running = 0.0
    for t in reversed(range(n)):
        delta = rewards[t] + gamma * next_value - values[t]
        running = delta + gamma * lam * running
        advantages[t] = running
        next_value = values[t]
    return advantages


def compute_advantages(
    buffer: RolloutBuffer, gamma: float, lam: float, normalize: bool = True
) -> RolloutBuffer:
    for trace in buffer.traces:
        rewards = [t.reward for t in trace.transitions]
        values = [t.value for t in trace.transitions]
        advantages = gae(rewards, values, trace.bootstrap_value, gamma, lam)
        for tr, adv in zip(trace.transitions, advantages):
            tr.advantage = float(adv)
            tr.ret = float(adv) + tr.value

    transitions = buffer.transitions()
    if normalize and len(transitions) > 1:
        adv = np.array([t.advantage for t in transitions])
        mean, std = adv.mean(), adv.std()
        if std > 0:
            for t, a in zip(transitions, (adv - mean) / std):
                t.advantage = float(a)
        else:
            for t in transitions:
                t.advantage = 0.0
    return buffer


def curriculum_advance(
    history: Sequence[float],
    stage: int,
    n_stages: int,
    window: int = 200,
    threshold: float = 0.9,
) -> int:
    """Promote to the next stage once the rolling success over ``window`` reaches ``threshold``."""
    if stage >= n_stages - 1 or len(history) < window:
        return stage
    if float(np.mean(history[-window:])) >= threshold:
        return stage + 1
    return stage


def _stack_chunks(chunks: Sequence[Chunk]) -> dict[str, torch.Tensor]:
    """Pad chunks to a common length; ``valid`` marks real steps."""
    n, length = len(chunks), max(len(c) for c in chunks)
    d = chunks[0].transitions[0].observation.d_laser
    lasers = torch.zeros(length, n, 3, d, dtype=DTYPE)
    goals = torch.zeros(length, n, 3, 2, dtype=DTYPE)
    velocities = torch.zeros(length, n, 3, 2, dtype=DTYPE)
    scalars = {name: torch.zeros(length, n, dtype=DTYPE) for name in ("log_prob", "adv", "ret")}
    u = torch.zeros(length, n, 2, dtype=DTYPE)
    old_mean = torch.zeros(length, n, 2, dtype=DTYPE)
    old_log_std = torch.zeros(length, n, 2, dtype=DTYPE)
    valid = torch.zeros(length, n, dtype=torch.bool)

    for j, chunk in enumerate(chunks):
        for t, tr in enumerate(chunk.transitions):
            obs = tr.observation
            lasers[t, j] = torch.as_tensor(obs.lasers)
            goals[t, j] = torch.as_tensor(obs.goals)
            velocities[t, j] = torch.as_tensor(obs.velocities)
            u[t, j] = torch.as_tensor(tr.u)
            old_mean[t, j] = torch.as_tensor(tr.old_mean)
            old_log_std[t, j] = torch.as_tensor(tr.old_log_std)
            scalars["log_prob"][t, j] = tr.log_prob
            scalars["adv"][t, j] = tr.advantage
            scalars["ret"][t, j] = tr.ret
            valid[t, j] = True

    return {
        "lasers": lasers, "goals": goals, "velocities": velocities, "u": u,
        "old_mean": old_mean, "old_log_std": old_log_std, "valid": valid,
        "h0": torch.cat([c.initial_hidden[0] for c in chunks]),
        "c0": torch.cat([c.initial_hidden[1] for c in chunks]),
        **scalars,
    }


def replay_log_probs(model: ActorCritic, chunk: Chunk) -> tuple[list[float], list[float]]:
    """Re-run a chunk one step at a time from its stored hidden state."""
    hidden = chunk.initial_hidden
    log_probs, values = [], []
    with torch.no_grad():
        for tr in chunk.transitions:
            out = model(*observation_tensors([tr.observation]), hidden)
            hidden = out.hidden
            dist = SquashedGaussian(out.mean, out.log_std)
            log_probs.append(float(dist.log_prob(torch.as_tensor(tr.u).unsqueeze(0))[0]))
            values.append(float(out.value[0]))
    return log_probs, values


class PPOTrainer:
    """Owns the policy, the optimizer and the curriculum state."""

    def __init__(self, config: Config, model: Optional[ActorCritic] = None) -> None:
        self.config = config
        self.cfg = config.trainer
        self.model = model or ActorCritic(config.d_laser, config.policy)
        self.optimizer = torch.optim.Adam(self.model.parameters(), lr=self.cfg.learning_rate)
        self.stage = 0
        self.stage_history: list[float] = []
        self.episodes = 0
        self.updates = 0
        self._rng = np.random.default_rng(self.cfg.seed)
        self._episode_seed = self.cfg.seed

        if self.cfg.target_update_ratio:
            logger.warning(
                f"target_update_ratio={self.cfg.target_update_ratio} is parsed but unused; "
                "the actor-critic has no target network"
            )
        logger.info(
            f"Policy '{config.policy.architecture}' with {parameter_count(self.model):,} parameters"
        )

    @property
    def stage_name(self) -> str:
        return self.cfg.stages[self.stage]

    def next_episode(self, env_index: int) -> tuple[str, int, Optional[int]]:
        """Current stage, or an earlier one with probability ``alternate_prob``."""
        stage = self.stage
        if stage > 0 and self._rng.random() < self.cfg.alternate_prob:
            stage = int(self._rng.integers(stage))
        self._episode_seed += 1
        return self.cfg.stages[stage], self._episode_seed, stage

    def update(self, buffer: RolloutBuffer) -> TrainStats:
        """Run ``epochs_per_batch`` gradient steps over all unroll chunks."""
        cfg = self.cfg
        chunks = buffer.chunks(cfg.lstm_unroll)
        batch = _stack_chunks(chunks)
        valid = batch["valid"]
        n_valid = valid.sum()
        stats = TrainStats(transitions=int(n_valid))

        snapshot = copy.deepcopy(self.model.state_dict())
        optimizer_snapshot = copy.deepcopy(self.optimizer.state_dict())
        self.updates += 1

        for _ in range(cfg.epochs_per_batch):
            hidden = (batch["h0"], batch["c0"])
            new_log_probs, values, kls, entropies = [], [], [], []
            try:
                for t in range(valid.shape[0]):
                    out = self.model(
                        batch["lasers"][t], batch["goals"][t], batch["velocities"][t], hidden
                    )
                    hidden = out.hidden
                    dist = SquashedGaussian(out.mean, out.log_std)
                    new_log_probs.append(dist.log_prob(batch["u"][t]))
                    values.append(out.value)
                    kls.append(dist.kl_from(batch["old_mean"][t], batch["old_log_std"][t]))
                    entropies.append(dist.entropy())
            except NumericalError as exc:
                logger.error(f"Aborting update {self.updates}: {exc}")
                self.model.load_state_dict(snapshot)
                self.optimizer.load_state_dict(optimizer_snapshot)
                stats.aborted = True
                return stats

            def masked_mean(x: torch.Tensor) -> torch.Tensor:
                return (x * valid).sum() / n_valid

            new_log_prob = torch.stack(new_log_probs)
            ratio = torch.exp(new_log_prob - batch["log_prob"])
            adv = batch["adv"]
            surrogate = ratio * adv
            if cfg.use_clip:
                clipped = torch.clamp(ratio, 1.0 - cfg.clip_ratio, 1.0 + cfg.clip_ratio) * adv
                surrogate = torch.minimum(surrogate, clipped)
            policy_loss = -masked_mean(surrogate)
            kl = masked_mean(torch.stack(kls))
            value_loss = masked_mean((torch.stack(values) - batch["ret"]).pow(2))
            entropy = masked_mean(torch.stack(entropies))

            loss = policy_loss + cfg.value_coeff * value_loss - cfg.entropy_coeff * entropy
            if cfg.use_kl_penalty:
                loss = loss + cfg.kl_penalty_coeff * kl

            if not torch.isfinite(loss):
                logger.error(f"Non-finite loss in update {self.updates}; restoring previous parameters")
                self.model.load_state_dict(snapshot)
                self.optimizer.load_state_dict(optimizer_snapshot)
                stats.aborted = True
                return stats

            self.optimizer.zero_grad()
            loss.backward()
            torch.nn.utils.clip_grad_norm_(self.model.parameters(), cfg.max_grad_norm)
            self.optimizer.step()

            stats.policy_loss = float(policy_loss)
            stats.value_loss = float(value_loss)
            stats.kl = float(kl)
            stats.entropy = float(entropy)
            stats.value_losses.append(float(value_loss))

        return stats

    def record_episodes(self, buffer: RolloutBuffer, stats: TrainStats) -> None:
        traces = buffer.traces
        stats.episodes = len(traces)
        stats.mean_episode_reward = float(np.mean([t.total_reward for t in traces])) if traces else 0.0
        stats.success_rate = float(np.mean([t.arrived for t in traces])) if traces else 0.0
        stats.stage = self.stage_name
        self.episodes += len(traces)

        for trace, stage in zip(traces, buffer.stage_index):
            if stage == self.stage:
                self.stage_history.append(1.0 if trace.arrived else 0.0)

        advanced = curriculum_advance(
            self.stage_history, self.stage, len(self.cfg.stages),
            self.cfg.promotion_window, self.cfg.promotion_threshold,
        )
        if advanced != self.stage:
            logger.info(f"Promoted from '{self.stage_name}' to '{self.cfg.stages[advanced]}'")
            self.stage = advanced
            self.stage_history = []


def ppo_update(trainer: PPOTrainer, buffer: RolloutBuffer) -> TrainStats:
    compute_advantages(buffer, trainer.cfg.gamma, trainer.cfg.gae_lambda)
    return trainer.update(buffer)


def save_checkpoint(path: Union[str, Path], trainer: PPOTrainer) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save(
        {
            "format_version": CHECKPOINT_FORMAT_VERSION,
            "config_hash": trainer.config.policy_hash(),
            "config": trainer.config.to_dict(),
            "model_state": trainer.model.state_dict(),
            "optimizer_state": trainer.optimizer.state_dict(),
            "stage": trainer.stage,
            "stage_history": list(trainer.stage_history),
            "episodes": trainer.episodes,
            "updates": trainer.updates,
            "episode_seed": trainer._episode_seed,
            "rng_state": trainer._rng.bit_generator.state,
        },
        path,
    )
    logger.info(f"Checkpoint saved: {path}")
    return path


def read_checkpoint(path: Union[str, Path], config: Optional[Config] = None) -> dict[str, Any]:
    """Load and validate a checkpoint payload against ``config`` (if given)."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Checkpoint not found: {path}")
    payload = torch.load(path, map_location="cpu", weights_only=False)
    version = payload.get("format_version")
    if version != CHECKPOINT_FORMAT_VERSION:
        raise CheckpointError(
            f"{path}: format version {version}, expected {CHECKPOINT_FORMAT_VERSION}"
        )
    if config is not None and payload.get("config_hash") != config.policy_hash():
        raise CheckpointError(f"{path}: config hash does not match the current configuration")
    return payload


def load_model(path: Union[str, Path], config: Optional[Config] = None) -> tuple[ActorCritic, Config]:
    payload = read_checkpoint(path, config)
    saved = Config.from_dict(payload["config"])
    model = ActorCritic(saved.d_laser, saved.policy)
    model.load_state_dict(payload["model_state"])
    model.eval()
    return model, saved


def load_trainer(path: Union[str, Path], config: Config) -> PPOTrainer:
    payload = read_checkpoint(path, config)
    trainer = PPOTrainer(config)
    trainer.model.load_state_dict(payload["model_state"])
    trainer.optimizer.load_state_dict(payload["optimizer_state"])
    trainer.stage = int(payload.get("stage", 0))
    trainer.episodes = int(payload.get("episodes", 0))
    trainer.updates = int(payload.get("updates", 0))
    trainer.stage_history = [float(x) for x in payload.get("stage_history", [])]
    trainer._episode_seed = int(payload.get("episode_seed", trainer.cfg.seed + trainer.episodes))
    if "rng_state" in payload:
        trainer._rng.bit_generator.state = payload["rng_state"]
    return trainer


def train(
    config: Config,
    output_dir: Union[str, Path],
    stage: Optional[str] = None,
    resume: Optional[Union[str, Path]] = None,
    max_updates: Optional[int] = None,
) -> PPOTrainer:
    """Train until the episode budget (or ``max_updates``) is spent.

    Writes ``train_log.jsonl`` (one line per update) and checkpoints to
    ``output_dir``.
    """
    cfg = config.trainer
    output_dir = Path(output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)

    trainer = load_trainer(resume, config) if resume else PPOTrainer(config)
    if stage is not None:
        if stage not in cfg.stages:
            raise ValueError(f"Unknown stage '{stage}'; stages are {list(cfg.stages)}")
        trainer.stage = cfg.stages.index(stage)

    envs = [
        NavigationEnv(config, augment=cfg.augment, n_agents=cfg.agents_per_env)
        for _ in range(cfg.num_envs)
    ]
    generators = [torch.Generator().manual_seed(cfg.seed + 7919 * i) for i in range(cfg.num_envs)]
    executor = ThreadPoolExecutor(max_workers=cfg.num_workers) if cfg.num_workers > 1 else None

    log_path = output_dir / "train_log.jsonl"
    logger.info(f"Training from stage '{trainer.stage_name}' for {cfg.total_episodes} episodes")
    try:
        with open(log_path, "a", encoding="utf-8") as log_file:
            while trainer.episodes < cfg.total_episodes:
                if max_updates is not None and trainer.updates >= max_updates:
                    break
                started = time.monotonic()
                trainer.model.eval()
                buffer = collect_rollouts(envs, trainer.model, cfg, trainer.next_episode, generators, executor)
                trainer.model.train()
                stats = ppo_update(trainer, buffer)
                trainer.record_episodes(buffer, stats)
                stats.wall_clock = time.monotonic() - started

                record = stats.to_dict()
                record.pop("value_losses")
                record["update"] = trainer.updates
                record["total_episodes"] = trainer.episodes
                log_file.write(json.dumps(record) + "\n")
                log_file.flush()
                logger.debug(
                    f"Update {trainer.updates}: reward {stats.mean_episode_reward:.2f}, "
                    f"success {stats.success_rate:.2f}, kl {stats.kl:.4f}"
                )
                if trainer.updates % cfg.checkpoint_every == 0:
                    save_checkpoint(output_dir / f"checkpoint_{trainer.updates:05d}.pt", trainer)
    finally:
        if executor is not None:
            executor.shutdown(wait=True)

    save_checkpoint(output_dir / "final.pt", trainer)
    return trainer
