import math

import numpy as np
import pytest
from conftest import make_agent, make_world

from pseudolaser_nav.geometry import Circle, ConvexPolygon
from pseudolaser_nav.world import (
    Action,
    CollisionKind,
    InvalidActionError,
    Obstacle,
    ObstacleCategory,
    check_collision,
    step_kinematics,
    wall,
)


def euler(x, y, theta, v, w, dt, substeps=100_000):
    h = dt / substeps
    for _ in range(substeps):
        x += v * math.cos(theta) * h
        y += v * math.sin(theta) * h
        theta += w * h
    return x, y, theta


@pytest.mark.parametrize(
    "v,wn,heading",
    [(1.0, 0.0, 0.3), (0.5, 1.0, 0.0), (0.8, -0.4, 2.0), (0.0, 0.7, -1.0)],
)
def test_kinematics_matches_fine_euler_integration(v, wn, heading):
    state = make_agent(1.0, -2.0, heading)
    nxt = step_kinematics(state, Action(v, wn), 0.1)
    ex, ey, etheta = euler(1.0, -2.0, heading, v, wn * math.pi / 2, 0.1)
    assert nxt.position[0] == pytest.approx(ex, abs=1e-5)
    assert nxt.position[1] == pytest.approx(ey, abs=1e-5)
    assert math.cos(nxt.heading - etheta) == pytest.approx(1.0, abs=1e-9)
    assert nxt.linear_vel == v
    assert nxt.w_normalized == pytest.approx(wn)


def test_straight_line_step():
    nxt = step_kinematics(make_agent(0.0, 0.0, math.pi / 2), Action(1.0, 0.0), 0.1)
    assert nxt.position == pytest.approx((0.0, 0.1), abs=1e-12)
    assert nxt.heading == pytest.approx(math.pi / 2)


def test_mirrored_commands_give_mirrored_motion():
    left = step_kinematics(make_agent(0.0, 0.5, 0.2), Action(0.9, 0.6), 0.1)
    right = step_kinematics(make_agent(0.0, -0.5, -0.2), Action(0.9, -0.6), 0.1)
    assert left.position[0] == pytest.approx(right.position[0], abs=1e-12)
    assert left.position[1] == pytest.approx(-right.position[1], abs=1e-12)
    assert left.heading == pytest.approx(-right.heading, abs=1e-12)


def test_heading_stays_wrapped():
    state = make_agent(heading=math.pi - 0.01)
    for _ in range(10):
        state = step_kinematics(state, Action(0.0, 1.0), 0.1)
        assert -math.pi < state.heading <= math.pi


@pytest.mark.parametrize(
    "action", [Action(float("nan"), 0.0), Action(1.5, 0.0), Action(-0.1, 0.0), Action(0.5, -1.2)]
)
def test_invalid_actions_rejected(action):
    with pytest.raises(InvalidActionError):
        step_kinematics(make_agent(), action, 0.1)


def test_action_clamped():
    assert Action(1.7, -3.0).clamped() == Action(1.0, -1.0)
    assert Action(-0.2, 0.5).clamped() == Action(0.0, 0.5)


@pytest.mark.parametrize("gap,collided", [(0.59, True), (0.61, False)])
def test_agent_agent_threshold(gap, collided):
    world = make_world([make_agent(0.0, 0.0), make_agent(gap, 0.0)])
    report = check_collision(world, 0)
    assert report.collided is collided
    if collided:
        assert report.kind is CollisionKind.AGENT
        assert report.other == 1


@pytest.mark.parametrize("x,collided", [(0.71, True), (0.69, False)])
def test_agent_obstacle_threshold(x, collided):
    block = Obstacle(ConvexPolygon.rectangle((1.5, 0.0), (1.0, 2.0)), (0.0, 1.0))
    world = make_world([make_agent(x, 0.0)], [block])
    report = check_collision(world, 0)
    assert report.collided is collided
    assert report.kind is (CollisionKind.OBSTACLE if collided else CollisionKind.NONE)


def test_bounds_collision():
    world = make_world([make_agent(4.75, 0.0)], bounds=(-5.0, -5.0, 5.0, 5.0))
    assert check_collision(world, 0).kind is CollisionKind.BOUNDS
    world = make_world([make_agent(4.65, 0.0)], bounds=(-5.0, -5.0, 5.0, 5.0))
    assert not check_collision(world, 0).collided


def test_agent_contact_reported_before_obstacle_and_bounds():
    world = make_world(
        [make_agent(4.75, 0.0), make_agent(4.75, 0.5)],
        [wall((4.0, -2.0), (4.0, 2.0))],
        bounds=(-5.0, -5.0, 5.0, 5.0),
    )
    assert check_collision(world, 0).kind is CollisionKind.AGENT


def test_slope_is_drivable_and_special_floor_is_not():
    slope = Obstacle(ConvexPolygon.rectangle((0.0, 0.0), (2.0, 2.0)), (0.0, 0.1), ObstacleCategory.SLOPE)
    world = make_world([make_agent()], [slope])
    assert not check_collision(world, 0).collided

    patch = Obstacle(Circle((0.0, 0.0), 0.5), (0.0, 0.0), ObstacleCategory.SPECIAL_FLOOR)
    world = make_world([make_agent()], [patch])
    assert check_collision(world, 0).kind is CollisionKind.OBSTACLE


def box_distance(x: float, y: float, center=(2.0, 0.0), half=0.5) -> float:
    dx = max(abs(x - center[0]) - half, 0.0)
    dy = max(abs(y - center[1]) - half, 0.0)
    return math.hypot(dx, dy)


@pytest.mark.parametrize("y", [0.0, 0.3, 0.7, -0.9])
def test_special_floor_contact_flips_at_radius(y):
    patch = Obstacle(ConvexPolygon.rectangle((2.0, 0.0), (1.0, 1.0)), (0.0, 0.0), ObstacleCategory.SPECIAL_FLOOR)
    checked = 0
    for x in np.linspace(1.0, 1.4, 801):
        d = box_distance(x, y)
        if abs(d - 0.3) < 1e-9:
            continue
        report = check_collision(make_world([make_agent(x, y)], [patch]), 0)
        assert report.collided is (d < 0.3)
        checked += 1
    assert checked > 700


def test_driving_onto_special_floor_stops_at_radius():
    patch = Obstacle(ConvexPolygon.rectangle((2.0, 0.0), (1.0, 1.0)), (0.0, 0.0), ObstacleCategory.SPECIAL_FLOOR)
    state = make_agent(1.5 - 0.3 - 0.0105, 0.2)
    previous = state
    for _ in range(100):
        state = step_kinematics(state, Action(0.1, 0.0), 0.01)
        if check_collision(make_world([state], [patch]), 0).collided:
            break
        previous = state
    assert box_distance(*state.position) < 0.3 <= box_distance(*previous.position)
    assert check_collision(make_world([state], [patch]), 0).kind is CollisionKind.OBSTACLE


def test_obstacle_validation():
    square = ConvexPolygon.rectangle((0.0, 0.0), (1.0, 1.0))
    with pytest.raises(ValueError):
        Obstacle(square, (0.0, 0.2), ObstacleCategory.SPECIAL_FLOOR)
    with pytest.raises(ValueError):
        Obstacle(square, (0.0, 0.3), ObstacleCategory.TABLE_TOP)
    with pytest.raises(ValueError):
        Obstacle(square, (0.0, 0.5), ObstacleCategory.CONE)
    with pytest.raises(ValueError):
        Obstacle(square, (0.5, 0.2))


def test_obstacle_dict_round_trip():
    slope = Obstacle(Circle((1.0, 1.0), 0.8), (0.0, 0.1), ObstacleCategory.SLOPE, incline=0.5)
    assert Obstacle.from_dict(slope.to_dict()) == slope


def test_slope_plane_rises_along_incline():
    slope = Obstacle(ConvexPolygon.rectangle((0.0, 0.0), (2.0, 2.0)), (0.0, 0.2), ObstacleCategory.SLOPE)
    offset, gradient = slope.slope_plane()
    heights = offset + np.array([[-1.0, 0.0], [1.0, 0.0], [0.0, 0.0]]) @ gradient
    np.testing.assert_allclose(heights, [0.0, 0.2, 0.1], atol=1e-12)
