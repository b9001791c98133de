import numpy as np
import pytest

from ductflight import CircularDuct
from ductflight.errors import EmptyInput
from ductflight.estimation.dataset import COL, DATASET_COLUMNS
from ductflight.forcemap import synthesize_field
from ductflight.sim import LOG, LOG_COLUMNS, Schedule, SimConfig, WaypointPolicy, flight_to_dataset_rows, simulate

DUCT = CircularDuct(0.175)


def mocap_cfg(**kw):
    return SimConfig(duct=DUCT, force_field=synthesize_field(DUCT), estimator="mocap", **kw)


def test_log_layout_and_rate():
    res = simulate(mocap_cfg(), (0.5, 0.0, -0.05), 2.0, seed=0)
    assert res.log.shape == (501, len(LOG_COLUMNS))
    np.testing.assert_allclose(np.diff(res.column("t")), 0.004)
    assert not res.collided and res.collision_time is None
    assert set(("ekf_y", "nn_y", "geo_y", "tof_down", "dist_fy", "sp_z")) <= set(LOG)


def test_flight_is_seed_deterministic():
    a = simulate(mocap_cfg(), (0.5, 0.0, -0.05), 1.0, seed=9)
    b = simulate(mocap_cfg(), (0.5, 0.0, -0.05), 1.0, seed=9)
    c = simulate(mocap_cfg(), (0.5, 0.0, -0.05), 1.0, seed=10)
    assert np.array_equal(a.log, b.log, equal_nan=True)
    assert not np.array_equal(a.log, c.log, equal_nan=True)


def test_hover_holds_position_with_mocap():
    res = simulate(mocap_cfg(), (0.5, 0.0, -0.05), 5.0, seed=1)
    w = res.window(2.0, 0.0)
    assert np.abs(w[:, LOG["y"]]).max() < 0.02
    assert np.abs(w[:, LOG["z"]] + 0.05).max() < 0.02


def test_config_validation():
    with pytest.raises(ValueError):
        SimConfig(estimator="mlp")
    with pytest.raises(ValueError):
        SimConfig(estimator="kalman")
    with pytest.raises(ValueError):
        SimConfig(estimator="truth", sense_rate=300.0)
    with pytest.raises(EmptyInput):
        simulate(SimConfig(estimator="truth"), (0.5, 0, 0), 0.0, seed=0)


def test_wall_collision_is_reported():
    # setpoint below the floor drives the drone into it
    res = simulate(SimConfig(duct=DUCT, estimator="truth"), Schedule(lambda t: (0.5, 0.0, -0.3)), 5.0, seed=0)
    assert res.collided and res.collision_time < 5.0
    assert res.log[-1, LOG["t"]] <= res.collision_time


def test_waypoint_targets_are_safe():
    pol = WaypointPolicy(DUCT)
    rng = np.random.default_rng(0)
    lo, hi = pol.altitude_limits()
    assert -DUCT.radius < lo < hi < DUCT.radius - pol.ceiling_margin
    for _ in range(200):
        x, y, z = pol.sample_target(rng)
        assert pol.safe(y, z)
        assert 0.35 <= x <= 0.65


def test_waypoint_schedule_is_smooth():
    sched = WaypointPolicy(DUCT).schedule(20.0, np.random.default_rng(1))
    track = np.array([sched(t) for t in np.arange(0, 20, 0.01)])
    assert np.abs(np.diff(track, axis=0)).max() < 0.01


def test_dataset_rows_from_flight():
    res = simulate(mocap_cfg(), (0.5, 0.01, -0.05), 4.0, seed=2)
    rows = flight_to_dataset_rows(res, drop_start=1.0, drop_end=1.0, t_offset=100.0)
    assert rows.shape[1] == len(DATASET_COLUMNS)
    w = res.window(1.0, 1.0)
    assert len(rows) == len(w)
    np.testing.assert_array_equal(rows[:, COL["t"]], w[:, LOG["t"]] + 100.0)
    np.testing.assert_array_equal(rows[:, COL["tof_down"]], w[:, LOG["tof_down"]])
    np.testing.assert_array_equal(rows[:, COL["vy"]], w[:, LOG["vy"]])
