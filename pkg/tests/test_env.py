import math

import numpy as np
import pytest
from conftest import make_agent, make_world, with_trainer

from pseudolaser_nav.config import RewardConfig
from pseudolaser_nav.env import (
    HISTORY_LENGTH,
    Action,
    EpisodeFinishedError,
    EpisodeStatus,
    Frame,
    NavigationEnv,
    assemble_observation,
    compute_reward,
    goal_polar,
)
from pseudolaser_nav.world import CollisionKind, CollisionReport, step_kinematics

NO_CONTACT = CollisionReport(False)
HIT = CollisionReport(True, CollisionKind.OBSTACLE, 0)


def frame(value: float, d: int = 4) -> Frame:
    return Frame(np.full(d, value), np.array([value, 0.0]), np.array([0.0, value / 10]))


def test_reward_progress_term():
    prev = make_agent(goal=(2.0, 0.0))
    curr = make_agent(0.5, 0.0, goal=(2.0, 0.0))
    reward = compute_reward(prev, curr, NO_CONTACT, RewardConfig())
    assert reward.r_goal == pytest.approx(1.25)
    assert reward.r_collision == 0.0
    assert reward.r_rotational == 0.0
    assert reward.total == pytest.approx(1.25)


def test_reward_rotational_penalty_threshold():
    prev = make_agent()
    fast = make_agent(angular_vel=0.8 * math.pi / 2)
    slow = make_agent(angular_vel=-0.6 * math.pi / 2)
    assert compute_reward(prev, fast, NO_CONTACT, RewardConfig()).r_rotational == pytest.approx(-0.08)
    assert compute_reward(prev, slow, NO_CONTACT, RewardConfig()).r_rotational == 0.0


def test_reward_arrival_and_collision():
    prev = make_agent(goal=(0.2, 0.0))
    arrived = make_agent(0.15, 0.0, goal=(0.2, 0.0))
    assert compute_reward(prev, arrived, NO_CONTACT, RewardConfig()).r_goal == 15.0
    crashed = make_agent(0.05, 0.0, goal=(2.0, 0.0))
    reward = compute_reward(make_agent(goal=(2.0, 0.0)), crashed, HIT, RewardConfig())
    assert reward.r_collision == -15.0
    assert reward.total == pytest.approx(-15.0 + 2.5 * 0.05)


def test_progress_rewards_telescope(rng):
    cfg = RewardConfig()
    state = make_agent(goal=(30.0, 10.0))
    start_distance = state.distance_to_goal()
    total = 0.0
    for _ in range(100):
        action = Action(float(rng.uniform(0, 1)), float(rng.uniform(-1, 1)))
        nxt = step_kinematics(state, action, 0.1)
        total += compute_reward(state, nxt, NO_CONTACT, cfg).r_goal
        state = nxt
    assert total == pytest.approx(cfg.omega_g * (start_distance - state.distance_to_goal()), abs=1e-9)


def test_goal_polar():
    agent = make_agent(heading=math.pi / 2, goal=(1.0, 1.0))
    distance, bearing = goal_polar(agent)
    assert distance == pytest.approx(math.sqrt(2.0))
    assert bearing == pytest.approx(-math.pi / 4)
    left = make_agent(goal=(0.0, 3.0))
    assert goal_polar(left)[1] == pytest.approx(math.pi / 2)


def test_assemble_observation_pads_and_orders():
    f, b, c, d = frame(1.0), frame(2.0), frame(3.0), frame(4.0)
    single = assemble_observation([f])
    np.testing.assert_array_equal(single.lasers, np.stack([f.laser] * 3))

    latest = assemble_observation([f, b, c, d])
    np.testing.assert_array_equal(latest.lasers[:, 0], [2.0, 3.0, 4.0])
    np.testing.assert_array_equal(latest.goals[:, 0], [2.0, 3.0, 4.0])
    np.testing.assert_array_equal(latest.velocities[:, 1], [0.2, 0.3, 0.4])
    assert latest.lasers.shape == (HISTORY_LENGTH, 4)
    assert latest.d_laser == 4

    pair = assemble_observation([f, b])
    np.testing.assert_array_equal(pair.lasers[:, 0], [1.0, 1.0, 2.0])

    with pytest.raises(ValueError):
        assemble_observation([])


def test_reset_is_deterministic(small_config):
    env = NavigationEnv(small_config)
    first = env.reset("test_crossing", seed=9)
    agents = list(env.world.agents)
    second = env.reset("test_crossing", seed=9)
    assert env.world.agents == agents
    for i in first:
        np.testing.assert_array_equal(first[i].lasers, second[i].lasers)
        np.testing.assert_array_equal(first[i].goals, second[i].goals)


def test_first_observation(small_config):
    env = NavigationEnv(small_config)
    obs = env.reset("empty", seed=0)
    assert list(obs) == [0]
    o = obs[0]
    assert o.lasers.shape == (3, small_config.d_laser)
    np.testing.assert_array_equal(o.lasers, small_config.camera.max_range)
    np.testing.assert_array_equal(o.velocities, 0.0)
    distance, bearing = goal_polar(env.world.agents[0])
    np.testing.assert_allclose(o.goals, [[distance, bearing]] * 3)


def test_goal_bearing_matches_rotation_oracle(small_config):
    env = NavigationEnv(small_config)
    obs = env.reset("stage2_crossing", seed=4)
    for i, agent in enumerate(env.world.agents):
        c, s = math.cos(agent.heading), math.sin(agent.heading)
        rotation = np.array([[c, s], [-s, c]])
        local = rotation @ (np.asarray(agent.goal) - np.asarray(agent.position))
        assert obs[i].goals[-1, 1] == pytest.approx(math.atan2(local[1], local[0]))


def start_env(config, agents, obstacles=()):
    env = NavigationEnv(config)
    env.start(make_world(agents, obstacles, bounds=(-5.0, -5.0, 5.0, 5.0)), "custom")
    return env


def test_arrival(small_config):
    env = start_env(small_config, [make_agent(goal=(0.15, 0.0))])
    _, rewards, status = env.step({0: Action(1.0, 0.0)})
    assert status[0] is EpisodeStatus.ARRIVED
    assert rewards[0].r_goal == 15.0
    assert env.finished
    with pytest.raises(EpisodeFinishedError):
        env.step({})


def test_head_on_collision_freezes_both(small_config):
    env = start_env(
        small_config,
        [make_agent(0.0, 0.0, 0.0, goal=(4.0, 0.0)), make_agent(0.7, 0.0, math.pi, goal=(-4.0, 0.0))],
    )
    _, rewards, status = env.step({0: Action(1.0, 0.0), 1: Action(1.0, 0.0)})
    assert status == {0: EpisodeStatus.COLLIDED, 1: EpisodeStatus.COLLIDED}
    assert rewards[0].r_collision == -15.0
    assert env.finished


def test_finished_agents_leave_the_step_results(small_config):
    env = start_env(
        small_config,
        [make_agent(goal=(0.15, 0.0)), make_agent(0.0, 2.0, goal=(4.0, 2.0))],
    )
    _, _, status = env.step({0: Action(1.0, 0.0), 1: Action(0.5, 0.0)})
    assert status[0] is EpisodeStatus.ARRIVED
    assert env.live_agents == [1]

    with pytest.raises(ValueError):
        env.step({0: Action(1.0, 0.0), 1: Action(0.5, 0.0)})
    obs, rewards, status = env.step({1: Action(0.5, 0.0)})
    assert set(obs) == set(rewards) == set(status) == {1}
    assert env.world.agents[0].position == pytest.approx((0.1, 0.0))


def test_timeout(small_config):
    config = with_trainer(small_config, max_episode_steps=3)
    env = start_env(config, [make_agent(goal=(4.0, 0.0))])
    statuses = []
    while not env.finished:
        _, rewards, status = env.step({0: Action(0.0, 0.0)})
        statuses.append(status[0])
        assert rewards[0].total == 0.0
    assert statuses == [EpisodeStatus.RUNNING, EpisodeStatus.RUNNING, EpisodeStatus.TIMEOUT]
    assert env.steps == 3


def test_step_before_reset(small_config):
    with pytest.raises(EpisodeFinishedError):
        NavigationEnv(small_config).step({0: Action(0.0, 0.0)})


def test_observation_history_shifts(small_config):
    env = start_env(small_config, [make_agent(goal=(4.0, 0.0))])
    env.step({0: Action(1.0, 0.5)})
    obs, _, _ = env.step({0: Action(0.5, -0.2)})
    np.testing.assert_allclose(obs[0].velocities, [[0.0, 0.0], [1.0, 0.5], [0.5, -0.2]])


def test_retarget_restarts_agent(small_config):
    env = start_env(small_config, [make_agent(goal=(0.15, 0.0))])
    env.step({0: Action(1.0, 0.0)})
    assert env.finished
    obs = env.retarget(0, (3.0, 0.0))
    assert env.live_agents == [0]
    assert env.steps == 0
    assert obs.goals[-1, 0] == pytest.approx(2.9)


def test_trajectory_records_every_step(small_config):
    env = start_env(small_config, [make_agent(goal=(4.0, 0.0))])
    for _ in range(4):
        env.step({0: Action(1.0, 0.0)})
    assert len(env.trajectory) == 5
    assert env.trajectory[-1][0].position == pytest.approx((0.4, 0.0))


def test_out_of_range_actions_are_clamped(small_config):
    env = start_env(small_config, [make_agent(goal=(4.0, 0.0))])
    env.step({0: Action(3.0, 0.0)})
    assert env.world.agents[0].position == pytest.approx((0.1, 0.0))
