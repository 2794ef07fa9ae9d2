import numpy as np
import pytest
from conftest import make_agent, make_world

from pseudolaser_nav.config import SENSING_MODES, NoiseParams, SensingConfig
from pseudolaser_nav.geometry import ConvexPolygon
from pseudolaser_nav.sensing import Sensor, SensingMode
from pseudolaser_nav.world import Obstacle, ObstacleCategory, wall


@pytest.fixture
def walled_world():
    return make_world([make_agent()], [wall((2.55, -10.0), (2.55, 10.0))])


@pytest.mark.parametrize("mode", [m for m in SENSING_MODES if m != "depth_minpool"])
def test_every_variant_agrees_on_full_height_walls(camera, walled_world, mode):
    laser = Sensor(camera, SensingConfig(mode=mode)).measure(walled_world, 0)
    reference = Sensor(camera, SensingConfig(mode="ideal_laser_bottom")).measure(walled_world, 0)
    assert laser.d_laser == camera.image_width
    np.testing.assert_allclose(laser.ranges, reference.ranges, rtol=1e-3)


def test_variants_disagree_on_low_furniture(camera):
    slab = Obstacle(ConvexPolygon.rectangle((1.5, 0.0), (1.0, 6.0)), (0.1, 0.2), ObstacleCategory.TABLE_TOP)
    world = make_world([make_agent()], [slab])
    ranges = {mode: Sensor(camera, SensingConfig(mode=mode)).measure(world, 0).ranges for mode in SENSING_MODES}
    assert np.all(ranges["ideal_laser_bottom"] == camera.max_range)
    assert np.all(ranges["ideal_laser_top"] == camera.max_range)
    assert np.all(ranges["depth_1d_semantic"] == camera.max_range)
    assert np.all(ranges["depth_minpool_semantic"] < 2.0)


def test_unmasked_minpool_sees_the_floor(camera):
    world = make_world([make_agent()])
    plain = Sensor(camera, SensingConfig(mode="depth_minpool")).measure(world, 0)
    semantic = Sensor(camera, SensingConfig(mode="depth_minpool_semantic")).measure(world, 0)
    assert np.all(plain.ranges < 1.0)
    assert np.all(semantic.ranges == camera.max_range)


def test_mode_flags():
    assert not SensingMode.IDEAL_LASER_TOP.uses_camera
    assert SensingMode.DEPTH_1D_SEMANTIC.semantic and not SensingMode.DEPTH_1D_SEMANTIC.min_pool
    assert SensingMode.DEPTH_MINPOOL_SEMANTIC_NOISE.min_pool


def test_augmentation_needs_rng(camera, walled_world):
    sensor = Sensor(camera)
    with pytest.raises(ValueError):
        sensor.measure(walled_world, 0, augment=True)


def test_augmented_measurement_is_reproducible(camera, walled_world):
    sensor = Sensor(camera, noise=NoiseParams())
    a = sensor.measure(walled_world, 0, np.random.default_rng(5), augment=True)
    b = sensor.measure(walled_world, 0, np.random.default_rng(5), augment=True)
    clean = sensor.measure(walled_world, 0)
    np.testing.assert_array_equal(a.ranges, b.ranges)
    assert not np.array_equal(a.ranges, clean.ranges)
