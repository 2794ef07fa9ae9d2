import json
import math
from concurrent.futures import ThreadPoolExecutor
from unittest import mock

import numpy as np
import pytest
import torch
from conftest import with_trainer

from pseudolaser_nav.config import CameraModel, Config, PolicyConfig, TrainerConfig
from pseudolaser_nav.env import EpisodeStatus, NavigationEnv, Observation, RewardBreakdown
from pseudolaser_nav.evaluation import PolicyController, run_eval
from pseudolaser_nav.network import (
    ActorCritic,
    NumericalError,
    SquashedGaussian,
    observation_tensors,
    policy_forward,
)
from pseudolaser_nav.trainer import (
    CHECKPOINT_FORMAT_VERSION,
    AgentTrace,
    CheckpointError,
    PPOTrainer,
    RolloutBuffer,
    TrainStats,
    Transition,
    collect_rollouts,
    compute_advantages,
    curriculum_advance,
    gae,
    load_model,
    load_trainer,
    ppo_update,
    read_checkpoint,
    replay_log_probs,
    run_episode,
    save_checkpoint,
    train,
)


def dummy_transition(reward: float = 0.0, value: float = 0.0, d: int = 4) -> Transition:
    obs = Observation(np.ones((3, d)), np.zeros((3, 2)), np.zeros((3, 2)))
    return Transition(obs, np.zeros(2), 0.0, value, np.zeros(2), np.full(2, -0.5), reward=reward)


def dummy_trace(n: int, hidden_size: int = 4) -> AgentTrace:
    trace = AgentTrace(scenario="x")
    for k in range(n):
        trace.transitions.append(dummy_transition(float(k)))
        trace.hiddens.append((torch.full((1, hidden_size), float(k)), torch.zeros(1, hidden_size)))
    return trace


class BanditEnv:
    """One-step episodes: reward 1 for turning left, 0 otherwise."""

    def __init__(self, d: int = 16, n_agents: int = 1) -> None:
        self.d = d
        self.n_agents = n_agents
        self.status: dict[int, EpisodeStatus] = {}

    @property
    def live_agents(self) -> list[int]:
        return [i for i, s in self.status.items() if not s.finished]

    @property
    def finished(self) -> bool:
        return bool(self.status) and not self.live_agents

    def observation(self) -> Observation:
        return Observation(np.full((3, self.d), 3.0), np.tile([2.0, 0.0], (3, 1)), np.zeros((3, 2)))

    def reset(self, scenario, seed):
        self.status = {i: EpisodeStatus.RUNNING for i in range(self.n_agents)}
        return {i: self.observation() for i in range(self.n_agents)}

    def step(self, actions):
        rewards = {
            i: RewardBreakdown(1.0 if a.w_normalized > 0 else 0.0, 0.0, 0.0) for i, a in actions.items()
        }
        status = {
            i: EpisodeStatus.ARRIVED if rewards[i].total else EpisodeStatus.COLLIDED for i in actions
        }
        self.status.update(status)
        return {i: self.observation() for i in actions}, rewards, status


def tiny_config(**trainer) -> Config:
    base = Config(
        camera=CameraModel(image_height=16, image_width=32),
        policy=PolicyConfig(architecture="lstm_feg", hidden_size=8, feature_size=8),
        trainer=TrainerConfig(
            batch_size=16, max_episode_steps=8, num_envs=2, lstm_unroll=4, checkpoint_every=1000
        ),
    )
    return with_trainer(base, **trainer) if trainer else base


def collect(config: Config, model: ActorCritic, executor=None) -> RolloutBuffer:
    cfg = config.trainer
    envs = [NavigationEnv(config, n_agents=1) for _ in range(cfg.num_envs)]
    generators = [torch.Generator().manual_seed(cfg.seed + 7919 * i) for i in range(cfg.num_envs)]
    schedule = PPOTrainer(config, model)
    return collect_rollouts(envs, model, cfg, schedule.next_episode, generators, executor)


# -- advantages -------------------------------------------------------------


def test_gae_single_terminal_step():
    np.testing.assert_allclose(gae([2.0], [0.5], 0.0, 0.99, 0.95), [1.5])


def test_gae_zero_everything():
    np.testing.assert_array_equal(gae([0.0] * 5, [0.0] * 5, 0.0, 0.99, 0.95), np.zeros(5))


def test_gae_lambda_one_is_discounted_return_minus_value():
    rewards, values, gamma = [1.0, -2.0, 3.0], [0.5, 0.1, -0.3], 0.9
    expected = [
        sum(gamma**k * rewards[t + k] for k in range(len(rewards) - t)) - values[t]
        for t in range(len(rewards))
    ]
    np.testing.assert_allclose(gae(rewards, values, 0.0, gamma, 1.0), expected)


def test_gae_lambda_zero_is_one_step_td():
    rewards, values, gamma = [1.0, 2.0], [0.5, 0.25], 0.9
    np.testing.assert_allclose(
        gae(rewards, values, 4.0, gamma, 0.0),
        [1.0 + gamma * 0.25 - 0.5, 2.0 + gamma * 4.0 - 0.25],
    )


def test_timeout_bootstraps_from_final_value():
    np.testing.assert_allclose(gae([1.0], [2.0], 3.0, 0.99, 0.95), [1.0 + 0.99 * 3.0 - 2.0])


def test_compute_advantages_normalises_and_sets_returns():
    buffer = RolloutBuffer([dummy_trace(6), dummy_trace(3)], [0, 0])
    for tr in buffer.transitions():
        tr.value = 0.3
    compute_advantages(buffer, 0.99, 0.95, normalize=False)
    for tr in buffer.transitions():
        assert tr.ret == pytest.approx(tr.advantage + 0.3)

    compute_advantages(buffer, 0.99, 0.95)
    adv = np.array([t.advantage for t in buffer.transitions()])
    assert abs(adv.mean()) < 1e-10
    assert adv.std() == pytest.approx(1.0)


def test_constant_advantages_normalise_to_zero():
    buffer = RolloutBuffer([dummy_trace(1), dummy_trace(1)], [0, 0])
    compute_advantages(buffer, 0.99, 0.95)
    assert [t.advantage for t in buffer.transitions()] == [0.0, 0.0]


# -- curriculum -------------------------------------------------------------


def test_curriculum_needs_a_full_window():
    assert curriculum_advance([1.0] * 199, 0, 3) == 0
    assert curriculum_advance([1.0] * 200, 0, 3) == 1


def test_curriculum_threshold():
    assert curriculum_advance([1.0] * 179 + [0.0] * 21, 0, 3) == 0
    assert curriculum_advance([0.0] * 21 + [1.0] * 180 + [0.0] * 20, 0, 3) == 1


def test_curriculum_uses_latest_window():
    assert curriculum_advance([0.0] * 500 + [1.0] * 200, 1, 3) == 2
    assert curriculum_advance([1.0, 0.0] * 150, 0, 3) == 0


def test_curriculum_stops_at_last_stage():
    assert curriculum_advance([1.0] * 300, 2, 3) == 2


def test_trainer_promotes_on_current_stage_episodes_only():
    trainer = PPOTrainer(tiny_config(promotion_window=4, promotion_threshold=0.75))
    traces = [dummy_trace(1) for _ in range(6)]
    statuses = [EpisodeStatus.ARRIVED] * 3 + [EpisodeStatus.COLLIDED] * 3
    for trace, status in zip(traces, statuses):
        trace.status = status
    # the last two episodes came from an earlier stage and are not counted
    buffer = RolloutBuffer(traces, [0, 0, 0, 0, None, None])
    stats = TrainStats()
    trainer.record_episodes(buffer, stats)
    assert trainer.stage == 1
    assert trainer.stage_history == []
    assert trainer.episodes == 6
    assert stats.success_rate == pytest.approx(0.5)


def test_alternate_stage_sampling():
    trainer = PPOTrainer(tiny_config(alternate_prob=1.0))
    trainer.stage = 2
    draws = [trainer.next_episode(0) for _ in range(20)]
    assert all(stage < 2 for _, _, stage in draws)
    assert [seed for _, seed, _ in draws] == list(range(1, 21))

    trainer = PPOTrainer(tiny_config(alternate_prob=0.0))
    trainer.stage = 2
    assert trainer.next_episode(0)[0] == "stage3_corridor"


# -- rollouts ---------------------------------------------------------------


def test_chunks_respect_unroll_length():
    buffer = RolloutBuffer([dummy_trace(10), dummy_trace(3)], [0, 0])
    chunks = buffer.chunks(4)
    assert [len(c) for c in chunks] == [4, 4, 2, 3]
    assert [float(c.initial_hidden[0][0, 0]) for c in chunks] == [0.0, 4.0, 8.0, 0.0]


def test_run_episode_records_whole_episode():
    config = tiny_config()
    torch.manual_seed(0)
    model = ActorCritic(config.d_laser, config.policy)
    env = NavigationEnv(config)
    traces = run_episode(env, model, "test_crossing:2", 3, torch.Generator().manual_seed(0))
    assert len(traces) == 2
    for trace in traces:
        assert trace.status.finished
        assert 1 <= len(trace.transitions) <= config.trainer.max_episode_steps
        assert len(trace.hiddens) == len(trace.transitions)
        if trace.status is not EpisodeStatus.TIMEOUT:
            assert trace.bootstrap_value == 0.0


def test_stored_log_probs_replay_exactly():
    config = tiny_config()
    torch.manual_seed(0)
    model = ActorCritic(config.d_laser, config.policy)
    buffer = collect(config, model)
    assert buffer.n_transitions >= config.trainer.batch_size
    for chunk in buffer.chunks(config.trainer.lstm_unroll):
        log_probs, values = replay_log_probs(model, chunk)
        assert log_probs == [t.log_prob for t in chunk.transitions]
        assert values == [t.value for t in chunk.transitions]


def test_rollouts_are_reproducible_with_threads():
    config = tiny_config(num_envs=3)
    torch.manual_seed(0)
    model = ActorCritic(config.d_laser, config.policy)
    sequential = collect(config, model)
    with ThreadPoolExecutor(max_workers=3) as executor:
        threaded = collect(config, model, executor)
    assert len(sequential.traces) == len(threaded.traces)
    for a, b in zip(sequential.transitions(), threaded.transitions()):
        np.testing.assert_array_equal(a.u, b.u)
        assert a.reward == b.reward


def test_environment_failure_names_the_episode():
    config = tiny_config(num_envs=1)
    env = NavigationEnv(config)
    model = ActorCritic(config.d_laser, config.policy)
    with mock.patch.object(env, "reset", side_effect=RuntimeError("renderer exploded")):
        with pytest.raises(RuntimeError, match="environment 0 failed on scenario 'stage1_open'"):
            collect_rollouts(
                [env], model, config.trainer, lambda i: ("stage1_open", 5, 0), [torch.Generator()]
            )


# -- updates ----------------------------------------------------------------


def bandit_buffer(trainer: PPOTrainer, n_agents: int = 16) -> RolloutBuffer:
    env = BanditEnv(trainer.config.d_laser, n_agents)
    return collect_rollouts(
        [env], trainer.model, trainer.cfg, lambda i: ("bandit", 0, 0), [torch.Generator().manual_seed(0)]
    )


def test_ppo_update_reports_finite_stats():
    trainer = PPOTrainer(tiny_config())
    stats = ppo_update(trainer, collect(trainer.config, trainer.model))
    assert not stats.aborted
    assert len(stats.value_losses) == trainer.cfg.epochs_per_batch
    assert all(np.isfinite([stats.policy_loss, stats.value_loss, stats.kl, stats.entropy]))
    assert stats.kl >= 0.0
    assert trainer.updates == 1


def test_value_loss_decreases_on_fixed_batch():
    config = tiny_config(entropy_coeff=0.0, use_kl_penalty=False, learning_rate=1e-4)
    torch.manual_seed(0)
    trainer = PPOTrainer(config)
    buffer = bandit_buffer(trainer)
    compute_advantages(buffer, trainer.cfg.gamma, trainer.cfg.gae_lambda)
    for tr in buffer.transitions():
        tr.advantage = 0.0
    losses = trainer.update(buffer).value_losses
    assert all(b < a for a, b in zip(losses, losses[1:]))


def test_non_finite_loss_restores_parameters():
    trainer = PPOTrainer(tiny_config())
    buffer = bandit_buffer(trainer)
    compute_advantages(buffer, 0.99, 0.95)
    buffer.transitions()[0].advantage = float("nan")
    before = {k: v.clone() for k, v in trainer.model.state_dict().items()}
    stats = trainer.update(buffer)
    assert stats.aborted
    for k, v in trainer.model.state_dict().items():
        assert torch.equal(v, before[k])


def test_numerical_error_mid_update_restores_parameters():
    trainer = PPOTrainer(tiny_config())
    buffer = bandit_buffer(trainer)
    compute_advantages(buffer, 0.99, 0.95)
    before = {k: v.clone() for k, v in trainer.model.state_dict().items()}
    forward = trainer.model.forward
    calls = {"n": 0}

    def flaky(*args, **kwargs):
        calls["n"] += 1
        if calls["n"] > 1:
            raise NumericalError("non-finite policy output", {"actor.bias": (float("nan"), 2)})
        return forward(*args, **kwargs)

    with mock.patch.object(trainer.model, "forward", side_effect=flaky):
        stats = trainer.update(buffer)
    assert stats.aborted
    assert len(stats.value_losses) == 1
    for k, v in trainer.model.state_dict().items():
        assert torch.equal(v, before[k])



def policy_shift(model: ActorCritic, buffer: RolloutBuffer, unroll: int) -> float:
    """Mean KL(old || new) over every stored step, replayed from the chunk hidden states."""
    kls = []
    with torch.no_grad():
        for chunk in buffer.chunks(unroll):
            hidden = chunk.initial_hidden
            for tr in chunk.transitions:
                out = model(*observation_tensors([tr.observation]), hidden)
                hidden = out.hidden
                dist = SquashedGaussian(out.mean, out.log_std)
                old_mean = torch.as_tensor(tr.old_mean).unsqueeze(0)
                old_log_std = torch.as_tensor(tr.old_log_std).unsqueeze(0)
                kls.append(float(dist.kl_from(old_mean, old_log_std)[0]))
    return float(np.mean(kls))


def test_one_update_with_default_hyperparameters_stays_close():
    config = Config(
        camera=CameraModel(image_height=16, image_width=32),
        policy=PolicyConfig(architecture="lstm_feg", hidden_size=8, feature_size=8),
        trainer=TrainerConfig(batch_size=64, max_episode_steps=20, num_envs=2),
    )
    torch.manual_seed(0)
    trainer = PPOTrainer(config)
    buffer = collect(config, trainer.model)
    stats = ppo_update(trainer, buffer)
    assert not stats.aborted
    assert policy_shift(trainer.model, buffer, config.trainer.lstm_unroll) < 0.05


def training_trace(config: Config, n_updates: int) -> list[tuple[np.ndarray, float, np.ndarray]]:
    cfg = config.trainer
    torch.manual_seed(cfg.seed)
    trainer = PPOTrainer(config)
    envs = [NavigationEnv(config, augment=True, n_agents=1) for _ in range(cfg.num_envs)]
    generators = [torch.Generator().manual_seed(cfg.seed + 7919 * i) for i in range(cfg.num_envs)]
    trace = []
    for _ in range(n_updates):
        buffer = collect_rollouts(envs, trainer.model, cfg, trainer.next_episode, generators)
        stats = ppo_update(trainer, buffer)
        trainer.record_episodes(buffer, stats)
        trace.extend((tr.u, tr.log_prob, tr.observation.lasers) for tr in buffer.transitions())
    return trace


def test_seeded_training_buffers_are_identical():
    config = tiny_config(seed=3)
    first, second = training_trace(config, 10), training_trace(config, 10)
    assert len(first) == len(second) > 0
    for (u_a, lp_a, obs_a), (u_b, lp_b, obs_b) in zip(first, second):
        assert np.array_equal(u_a, u_b)
        assert lp_a == lp_b
        assert np.array_equal(obs_a, obs_b)


@pytest.mark.slow
def test_policy_learns_bandit():
    config = Config(
        camera=CameraModel(image_height=16, image_width=16),
        policy=PolicyConfig(architecture="cnn", hidden_size=16, feature_size=16),
        trainer=TrainerConfig(batch_size=32, entropy_coeff=0.0, learning_rate=5e-3),
    )
    torch.manual_seed(0)
    trainer = PPOTrainer(config)
    for _ in range(500):
        ppo_update(trainer, bandit_buffer(trainer, n_agents=32))

    env = BanditEnv(16)
    out = policy_forward(trainer.model, [env.observation()])
    dist = torch.distributions.Normal(out.mean[0, 1], out.log_std[0, 1].exp())
    assert float(1 - dist.cdf(torch.tensor(0.0, dtype=out.mean.dtype))) >= 0.99


# -- checkpoints ------------------------------------------------------------


def test_checkpoint_round_trip(tmp_path):
    config = tiny_config()
    trainer = PPOTrainer(config)
    ppo_update(trainer, collect(config, trainer.model))
    trainer.stage, trainer.episodes = 1, 42
    path = save_checkpoint(tmp_path / "ckpt.pt", trainer)

    model, saved = load_model(path, config)
    assert saved == config
    observations = [BanditEnv(config.d_laser).observation()]
    a, b = policy_forward(trainer.model, observations), policy_forward(model, observations)
    assert torch.equal(a.mean, b.mean)
    assert torch.equal(a.value, b.value)

    resumed = load_trainer(path, config)
    assert (resumed.stage, resumed.episodes, resumed.updates) == (1, 42, 1)
    assert resumed.optimizer.state_dict()["state"].keys() == trainer.optimizer.state_dict()["state"].keys()



def test_resumed_trainer_continues_curriculum_schedule(tmp_path):
    config = tiny_config()
    trainer = PPOTrainer(config)
    trainer.stage = 2
    trainer.stage_history = [1.0, 0.0, 1.0]
    for _ in range(7):
        trainer.next_episode(0)
    path = save_checkpoint(tmp_path / "ckpt.pt", trainer)

    resumed = load_trainer(path, config)
    assert resumed.stage_history == [1.0, 0.0, 1.0]
    assert [resumed.next_episode(0) for _ in range(40)] == [trainer.next_episode(0) for _ in range(40)]

def test_checkpoint_hash_mismatch(tmp_path):
    config = tiny_config()
    path = save_checkpoint(tmp_path / "ckpt.pt", PPOTrainer(config))
    other = config.replace(camera=CameraModel(image_height=16, image_width=64))
    with pytest.raises(CheckpointError):
        load_model(path, other)
    # without a config the checkpoint's own settings are used
    model, saved = load_model(path)
    assert saved.d_laser == 32


def test_checkpoint_format_version(tmp_path):
    path = tmp_path / "old.pt"
    torch.save({"format_version": CHECKPOINT_FORMAT_VERSION + 1}, path)
    with pytest.raises(CheckpointError):
        read_checkpoint(path)
    with pytest.raises(FileNotFoundError):
        read_checkpoint(tmp_path / "missing.pt")


def test_train_writes_log_and_checkpoints(tmp_path):
    config = tiny_config(num_envs=1, batch_size=8, max_episode_steps=4, checkpoint_every=1)
    trainer = train(config, tmp_path, max_updates=1)
    assert trainer.updates == 1
    assert (tmp_path / "final.pt").exists()
    assert (tmp_path / "checkpoint_00001.pt").exists()
    lines = (tmp_path / "train_log.jsonl").read_text().splitlines()
    record = json.loads(lines[0])
    assert record["update"] == 1
    assert record["stage"] == "stage1_open"

    resumed = train(config, tmp_path, resume=tmp_path / "final.pt", max_updates=2)
    assert resumed.updates == 2
    assert len((tmp_path / "train_log.jsonl").read_text().splitlines()) == 2


def test_train_rejects_unknown_stage(tmp_path):
    with pytest.raises(ValueError):
        train(tiny_config(), tmp_path, stage="stage9", max_updates=1)


@pytest.mark.slow
def test_short_training_run_end_to_end(tmp_path):
    config = tiny_config(batch_size=64, max_episode_steps=30, checkpoint_every=5)
    trainer = train(config, tmp_path, max_updates=10)
    assert trainer.updates == 10

    records = [json.loads(line) for line in (tmp_path / "train_log.jsonl").read_text().splitlines()]
    assert [r["update"] for r in records] == list(range(1, 11))
    for r in records:
        assert 0.0 <= r["success_rate"] <= 1.0
        assert math.isfinite(r["mean_episode_reward"]) and math.isfinite(r["kl"])
        assert r["episodes"] > 0 and not r["aborted"]
    assert records[-1]["total_episodes"] == trainer.episodes
    for name in ("checkpoint_00005.pt", "checkpoint_00010.pt", "final.pt"):
        assert (tmp_path / name).exists()

    controller = PolicyController(tmp_path / "final.pt", config)
    metrics = run_eval(controller, "stage1_open", 4, seed=1, config=config)
    assert metrics.n_trials >= 4
    assert metrics.n_success + metrics.n_collision + metrics.n_timeout == metrics.n_trials
