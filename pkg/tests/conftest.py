import numpy as np
import pytest

from arrayscope.geometry import ArrayConfig, ArrayLayout, LensSpec, SensorSpec
from arrayscope.scene import make_textured_scene

LENS = LensSpec.from_mm(25.05, 4.0, 13.0)


def small_lens(pitch_mm):
    return LensSpec.from_mm(25.05, 4.0, min(13.0, pitch_mm))


@pytest.fixture(scope="session")
def prototype_sensor():
    return SensorSpec(pixel_pitch_um=1.1, pixels_x=4208, pixels_y=3120,
                      bit_depth=8)


@pytest.fixture(scope="session")
def prototype_config(prototype_sensor):
    layout = ArrayLayout.from_mm(rows=6, cols=9, pitch_x_mm=13.5)
    return ArrayConfig(prototype_sensor, LENS, layout, magnification=0.1)


@pytest.fixture(scope="session")
def small_config():
    """2x2 continuous-regime array small enough for sub-second renders."""
    sensor = SensorSpec(1.1, pixels_x=480, pixels_y=360)
    layout = ArrayLayout.from_mm(2, 2, 1.6)
    return ArrayConfig(sensor, small_lens(1.6), layout, magnification=0.2)


@pytest.fixture(scope="session")
def small_scene(small_config):
    pitch = small_config.sensor.pixel_pitch_um / (2 * small_config.magnification)
    return make_textured_scene((4600, 4100), pitch, seed=7)


@pytest.fixture(scope="session")
def grid3_config():
    """3x3 continuous array for global-solve tests."""
    sensor = SensorSpec(1.1, pixels_x=480, pixels_y=360)
    layout = ArrayLayout.from_mm(3, 3, 1.6)
    return ArrayConfig(sensor, small_lens(1.6), layout, magnification=0.2)


@pytest.fixture(scope="session")
def grid3_scene(grid3_config):
    pitch = grid3_config.sensor.pixel_pitch_um / (2 * grid3_config.magnification)
    return make_textured_scene((6100, 5600), pitch, seed=11)


@pytest.fixture()
def rng():
    return np.random.default_rng(20240817)
