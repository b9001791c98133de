import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ductflight import CircularDuct, Ray, RectangularDuct, ray_cast
from ductflight.dynamics import DroneState
from ductflight.errors import OutOfDuct
from ductflight.geometry import rotation_from_euler
from ductflight.sensors import (MIRROR_PERMUTATION, N_CHANNELS, ImuParams, TofArray, TofArrayConfig,
                                TofFrame, TofSensorConfig, cone_distance, mirror_channel, ring_counts,
                                sense_array, sense_imu)

R35 = CircularDuct(0.175)
CENTER = np.array([0.5, 0.0, 0.0])


def level(p=CENTER, v=(0, 0, 0), roll=0.0, pitch=0.0, yaw=0.0):
    return DroneState(np.asarray(p, float), np.asarray(v, float), rotation_from_euler(roll, pitch, yaw))


def test_channel_layout():
    cfg = TofArrayConfig.default()
    for i in range(8):
        np.testing.assert_allclose(cfg.channels[i].direction,
                                   (math.cos(i * math.pi / 4), math.sin(i * math.pi / 4), 0.0), atol=1e-15)
    assert cfg.channels[8].direction == (0.0, 0.0, 1.0)
    assert cfg.channels[9].direction == (0.0, 0.0, -1.0)
    assert [mirror_channel(i) for i in range(10)] == [0, 7, 6, 5, 4, 3, 2, 1, 8, 9]
    # each horizontal channel's mirror looks in the y-negated direction
    for i in range(8):
        d = np.array(cfg.channels[i].direction) * [1, -1, 1]
        np.testing.assert_allclose(cfg.channels[MIRROR_PERMUTATION[i]].direction, d, atol=1e-15)


def test_ring_layout():
    assert ring_counts(37) == [6, 12, 18]
    assert ring_counts(1) == []
    dirs = TofSensorConfig().cone_directions()
    assert len(dirs) == 37
    np.testing.assert_allclose(dirs[0], (1, 0, 0))
    ang = np.arccos(np.clip(dirs @ np.array([1.0, 0, 0]), -1, 1))
    assert ang.max() == pytest.approx(math.radians(13.5))


def test_sensor_config_validation():
    with pytest.raises(ValueError):
        TofSensorConfig(half_angle=0.0)
    with pytest.raises(ValueError):
        TofSensorConfig(rays=0)
    with pytest.raises(ValueError):
        TofSensorConfig(statistic="median")


def test_single_ray_equals_ray_cast():
    s = TofSensorConfig(direction=(0.3, 0.5, -0.8), rays=1, noise_sigma=0.0, quantization=0.0)
    p = np.array([0.5, 0.03, -0.02])
    R = rotation_from_euler(0.1, -0.05, 0.2)
    expected = ray_cast(R35, Ray(p, R @ np.array(s.direction)))
    assert cone_distance(R35, p, R, s) == pytest.approx(expected, abs=1e-15)


def cone_mean_oracle(d, half_angle):
    """Mean of d / cos(alpha) over the cone's solid angle (closed-form integral)."""
    c = math.cos(half_angle)
    return d * (-math.log(c)) / (1.0 - c)


def test_flat_wall_cone_mean():
    wall = RectangularDuct(0.4, 20.0, 20.0)
    s = TofSensorConfig(direction=(0, 1, 0), noise_sigma=0.0, quantization=0.0)
    v = cone_distance(wall, [10.0, 0.0, 0.0], np.eye(3), s)
    assert 0.200 <= v <= 0.2057
    # the ring quadrature approximates the uniform solid-angle mean
    assert v == pytest.approx(cone_mean_oracle(0.2, math.radians(13.5)), abs=1e-3)
    # min statistic returns the perpendicular ray
    assert cone_distance(wall, [10.0, 0, 0], np.eye(3), TofSensorConfig(
        direction=(0, 1, 0), statistic="min", noise_sigma=0.0, quantization=0.0)) == pytest.approx(0.2)


def test_axial_sensor_reads_zero():
    s = TofSensorConfig(direction=(1, 0, 0), rays=37, noise_sigma=0.0)
    assert cone_distance(R35, CENTER, np.eye(3), s) == 0.0


def test_level_on_axis_readings():
    f = sense_array(R35, level(), TofArrayConfig.noise_free(rays=1), clip=None)
    d = f.distances
    assert d[2] == pytest.approx(0.175) and d[6] == pytest.approx(0.175)
    for i in (1, 3, 5, 7):
        assert d[i] == pytest.approx(0.175 * math.sqrt(2), abs=1e-12)
    assert d[0] == 0.0 and d[4] == 0.0
    assert d[8] == pytest.approx(0.175) and d[9] == pytest.approx(0.175)
    clipped = sense_array(R35, level(), TofArrayConfig.noise_free(rays=1), clip=0.5).distances
    np.testing.assert_array_equal(clipped, d)


def test_clip_replaces_long_range_with_zero():
    big = CircularDuct(0.62)
    d = sense_array(big, level(), TofArrayConfig.noise_free(rays=1), clip=0.5).distances
    assert d[2] == 0.0 and d[9] == 0.0
    assert np.all((d == 0.0) | (d <= 0.5))


def test_out_of_duct():
    with pytest.raises(OutOfDuct):
        sense_array(R35, level(p=(0.5, 0.0, 0.2)), TofArrayConfig.default())


def test_frame_carries_state():
    st_ = level(v=(0.0, 0.1, -0.2), roll=0.05, pitch=-0.03)
    f = sense_array(R35, st_, TofArrayConfig.default())
    assert (f.vy, f.vz) == (0.1, -0.2)
    assert f.roll == pytest.approx(0.05) and f.pitch == pytest.approx(-0.03)
    x = f.estimator_inputs()
    assert x.shape == (13,)
    np.testing.assert_array_equal(x[:9], f.distances[[0, 1, 2, 3, 4, 5, 6, 7, 9]])


def test_quantisation_and_noise_determinism():
    cfg = TofArrayConfig.default()
    arr = TofArray(cfg, 0.5)
    p, R = np.array([0.5, 0.02, -0.05]), rotation_from_euler(0.05, 0.02, 0.0)
    a = arr.measure(R35, p, R, np.random.default_rng(3))
    b = arr.measure(R35, p, R, np.random.default_rng(3))
    np.testing.assert_array_equal(a, b)
    nz = a[a > 0]
    np.testing.assert_allclose(nz, np.round(nz, 3), atol=1e-12)


def test_vectorised_array_matches_per_channel():
    cfg = TofArrayConfig.default(noise_sigma=0.0, quantization=0.0)
    p, R = np.array([0.5, 0.04, -0.06]), rotation_from_euler(0.1, -0.1, 0.05)
    fast = TofArray(cfg, clip=None).measure(R35, p, R)
    slow = [cone_distance(R35, p, R, c) for c in cfg.channels]
    np.testing.assert_allclose(fast, slow, atol=1e-14)


pose = st.tuples(st.floats(-0.06, 0.06), st.floats(-0.07, 0.06), st.floats(-0.3, 0.3),
                 st.floats(-0.3, 0.3), st.floats(-0.3, 0.3))


@settings(max_examples=60, deadline=None)
@given(pose)
def test_mirror_symmetry(p):
    y, z, roll, pitch, yaw = p
    cfg = TofArrayConfig.noise_free(rays=37)
    a = sense_array(R35, level((0.5, y, z), (0, 0.1, 0), roll, pitch, yaw), cfg, clip=None).distances
    b = sense_array(R35, level((0.5, -y, z), (0, -0.1, 0), -roll, pitch, -yaw), cfg, clip=None).distances
    np.testing.assert_allclose(b, a[MIRROR_PERMUTATION], atol=1e-12)


@settings(max_examples=60, deadline=None)
@given(st.floats(0, 0.12), st.floats(0, 2 * math.pi))
def test_cone_mean_exceeds_normal_ray(rho, phi):
    # aimed radially outward along the inward normal of the nearest wall point
    y, z = rho * math.cos(phi), rho * math.sin(phi)
    d = (0.0, math.cos(phi), math.sin(phi))
    s = TofSensorConfig(direction=d, noise_sigma=0.0, quantization=0.0)
    single = TofSensorConfig(direction=d, rays=1, noise_sigma=0.0, quantization=0.0)
    p = [0.5, y, z]
    assert cone_distance(R35, p, np.eye(3), s) >= cone_distance(R35, p, np.eye(3), single) - 1e-12


def test_imu_examples():
    hover = sense_imu(level())
    np.testing.assert_allclose(hover.accel, (0, 0, 9.81))
    fall = DroneState(accel=np.array([0, 0, -9.81]))
    np.testing.assert_allclose(sense_imu(fall).accel, (0, 0, 0), atol=1e-15)
    push = DroneState(accel=np.array([0.5, 0, 0]))
    np.testing.assert_allclose(sense_imu(push).accel, (0.5, 0, 9.81))
    noisy = sense_imu(level(), ImuParams(0.05, 0.005), np.random.default_rng(0))
    assert np.all(np.isfinite(noisy.accel)) and np.any(noisy.gyro != 0)


def test_frame_type_defaults():
    f = TofFrame(0.0, np.zeros(N_CHANNELS))
    assert f.estimator_inputs().shape == (13,)
