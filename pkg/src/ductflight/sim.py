"""Closed-loop simulation: physics, sensing, estimation and control on one clock.

Loop schedule on the 1 kHz physics clock (all rates are configurable):

* physics and disturbance: every tick
* attitude/rate control: 500 Hz, position/velocity control: 100 Hz
* IMU, EKF prediction, ToF sensing and logging: 250 Hz
* localizer (MLP, geometric or tracking fix) and EKF update: 10 Hz

The forward axis (x, vx) is not estimated; the controller reads it from the
truth state, standing in for the optical-flow odometry of the real platform.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .control import CascadeController, CascadeGains, ControlInput, Setpoint
from .dynamics import DroneParams, DroneState, Disturbance, Quadrotor, hover_trim
from .errors import EmptyInput, Underdetermined
from .estimation.dataset import DATASET_COLUMNS
from .estimation.ekf import EkfState, ekf_predict, ekf_update
from .estimation.geometric import problem_from_frame, solve_geometric
from .estimation.mlp import MlpModel
from .forcemap import ForceField
from .geometry import CircularDuct, DuctShape, drone_clear_of_wall
from .sensors import ESTIMATOR_CHANNELS, ImuParams, ImuSample, TofArray, TofArrayConfig, GRAVITY

ESTIMATORS = ("truth", "mocap", "mlp", "geometric")

LOG_COLUMNS = (
    ("t", "x", "y", "z", "roll", "pitch", "yaw",
     "ekf_y", "ekf_z", "ekf_vy", "ekf_vz", "nn_y", "nn_z", "geo_y", "geo_z", "geo_valid")
    + tuple(f"tof{i}" for i in range(8)) + ("tof_up", "tof_down")
    + ("cmd0", "cmd1", "cmd2", "cmd3", "dist_fy", "dist_fz", "saturated",
       "int_vx", "int_vy", "int_vz", "vx", "vy", "vz", "sp_y", "sp_z")
)
LOG = {c: k for k, c in enumerate(LOG_COLUMNS)}


@dataclass
class SimConfig:
    duct: DuctShape = field(default_factory=lambda: CircularDuct(0.175))
    force_field: Optional[ForceField] = None
    params: DroneParams = field(default_factory=DroneParams)
    tof: TofArrayConfig = field(default_factory=TofArrayConfig.default)
    clip: float = 0.5
    imu: ImuParams = field(default_factory=ImuParams)
    gains: CascadeGains = field(default_factory=CascadeGains)
    estimator: str = "mlp"
    model: Optional[MlpModel] = None
    physics_rate: float = 1000.0
    sense_rate: float = 250.0
    fix_rate: float = 10.0
    ekf_accel_sigma: float = 0.05
    ekf_meas_sigma: float = 0.005
    mocap_sigma: float = 0.001
    ou_tau: float = 0.5
    log: bool = True

    def __post_init__(self):
        if self.estimator not in ESTIMATORS:
            raise ValueError(f"estimator must be one of {ESTIMATORS}")
        if self.estimator == "mlp" and self.model is None:
            raise ValueError("the mlp estimator needs a model")
        if self.estimator == "geometric" and not isinstance(self.duct, CircularDuct):
            raise ValueError("the geometric localizer only handles circular ducts")
        for rate in (self.gains.inner_rate, self.gains.outer_rate, self.sense_rate, self.fix_rate):
            ratio = self.physics_rate / rate
            if abs(ratio - round(ratio)) > 1e-9:
                raise ValueError(f"rate {rate} Hz does not divide the physics rate")


@dataclass
class FlightResult:
    log: np.ndarray  # (n, len(LOG_COLUMNS)) at the sensing rate
    collided: bool
    collision_time: Optional[float]
    duration: float
    seed: int

    def column(self, name: str) -> np.ndarray:
        return self.log[:, LOG[name]]

    def window(self, start: float, end_margin: float) -> np.ndarray:
        """Rows with ``start <= t <= duration - end_margin``."""
        t = self.column("t")
        return self.log[(t >= start) & (t <= self.duration - end_margin)]


class Schedule:
    """Piecewise setpoint schedule: a callable t -> (x, y, z)."""

    def __init__(self, fn: Callable[[float], Sequence[float]]):
        self.fn = fn

    def __call__(self, t: float):
        return self.fn(t)

    @classmethod
    def constant(cls, position) -> "Schedule":
        p = tuple(float(c) for c in position)
        return cls(lambda t: p)


def _nn_output_in_flight_frame(y: float, z: float, model: MlpModel, duct: DuctShape) -> tuple:
    """Shift a localizer output trained in another duct to this duct's frame.

    Outputs are axis-centered in the training duct; the vertical coordinate is
    re-referenced through the floor so altitude above ground is preserved.
    """
    r_train = model.duct_radius
    if r_train is None or abs(r_train - duct.half_height) < 1e-12:
        return y, z
    return y, z + r_train - duct.half_height


def simulate(cfg: SimConfig, schedule, duration: float, seed: int,
             initial: Optional[DroneState] = None, stop_on_collision: bool = True) -> FlightResult:
    """Run one closed-loop flight.

    The drone starts in hover at the schedule's first setpoint unless an
    ``initial`` state is given.  All randomness derives from ``seed``.
    """
    if duration <= 0:
        raise EmptyInput("flight duration must be positive")
    if not callable(schedule):
        schedule = Schedule.constant(schedule)
    rng = np.random.default_rng(seed)
    rng_dist, rng_imu, rng_tof, rng_fix = (np.random.default_rng(s) for s in rng.integers(0, 2**63, 4))

    params, duct = cfg.params, cfg.duct
    dt = 1.0 / cfg.physics_rate
    n_steps = int(round(duration * cfg.physics_rate))
    inner_every = int(round(cfg.physics_rate / cfg.gains.inner_rate))
    sense_every = int(round(cfg.physics_rate / cfg.sense_rate))
    fix_every = int(round(cfg.physics_rate / cfg.fix_rate))
    dt_sense = sense_every * dt

    sp0 = schedule(0.0)
    if initial is None:
        initial = DroneState(position=np.array(sp0, dtype=float))
        initial.accel = np.zeros(3)
    quad = Quadrotor(params, initial)
    ctrl = CascadeController(cfg.gains, params)
    tof = TofArray(cfg.tof, cfg.clip)
    dist = Disturbance(cfg.force_field, cfg.ou_tau) if cfg.force_field is not None else None
    ou = (0.0, 0.0)
    if dist is not None:
        # start the fluctuation from its stationary distribution
        ou = tuple(rng_dist.standard_normal(2))

    meas_sigma = cfg.mocap_sigma if cfg.estimator == "mocap" else cfg.ekf_meas_sigma
    ekf = EkfState.at(quad.py, quad.pz, quad.vy, quad.vz, accel_sigma=cfg.ekf_accel_sigma,
                      meas_sigma=meas_sigma)
    use_ekf = cfg.estimator != "truth"
    model = cfg.model
    is_circ = isinstance(duct, CircularDuct)
    body_dirs = np.array([c.direction for c in cfg.tof.channels], dtype=float)

    n_log = n_steps // sense_every + 1 if cfg.log else 0
    log = np.zeros((n_log, len(LOG_COLUMNS)))
    cmd = hover_trim(params)
    sat = False
    fy = fz = 0.0
    ranges = np.zeros(10)
    nn = (math.nan, math.nan)
    geo = (math.nan, math.nan, 0.0)
    gyro = (0.0, 0.0, 0.0)
    accel_sigma, gyro_sigma = cfg.imu.accel_sigma, cfg.imu.gyro_sigma
    noise_chunk = 4096
    dist_noise = rng_dist.standard_normal((noise_chunk, 2)) if dist is not None else None
    k_noise = 0
    clear_radius = math.hypot(0.5 * params.span, 0.5 * params.height)
    collided, t_hit = False, None
    row = 0
    sp = sp0
    setpoint = Setpoint(np.array(sp0, dtype=float))

    for i in range(n_steps + 1):
        t = i * dt
        if i % sense_every == 0:
            # IMU + EKF prediction, ToF frame, log
            R = quad.attitude
            f = R.T @ np.array([quad.ax, quad.ay, quad.az + GRAVITY])
            if accel_sigma > 0:
                f = f + accel_sigma * rng_imu.standard_normal(3)
            gyro = (quad.wx, quad.wy, quad.wz)
            if gyro_sigma > 0:
                gn = gyro_sigma * rng_imu.standard_normal(3)
                gyro = (gyro[0] + gn[0], gyro[1] + gn[1], gyro[2] + gn[2])
            if use_ekf and i > 0:
                ekf = ekf_predict(ekf, ImuSample(t, f, np.array(gyro)), R, dt_sense)
            ranges = tof.measure(duct, (quad.px, quad.py, quad.pz), R, rng_tof)

            if i % fix_every == 0 and use_ekf:
                fix = None
                if cfg.estimator == "mocap":
                    fix = (quad.py + meas_sigma * rng_fix.standard_normal(),
                           quad.pz + meas_sigma * rng_fix.standard_normal())
                if model is not None:
                    x_in = np.concatenate([ranges[list(ESTIMATOR_CHANNELS)],
                                           [ekf.mean[2], ekf.mean[3], quad.roll, quad.pitch]])
                    out = model.forward(x_in[None, :])[0]
                    nn = _nn_output_in_flight_frame(float(out[0]), float(out[1]), model, duct)
                    if cfg.estimator == "mlp":
                        fix = nn
                if is_circ:
                    try:
                        sol = solve_geometric(problem_from_frame(ranges, R, duct.radius, body_dirs))
                        geo = (sol.y, sol.z, float(sol.inside))
                    except Underdetermined:
                        geo = (math.nan, math.nan, 0.0)
                    if cfg.estimator == "geometric" and geo[2]:
                        fix = geo[:2]
                if fix is not None:
                    ekf = ekf_update(ekf, fix)

            if cfg.log and row < n_log:
                ints = ctrl.integrators
                log[row] = (t, quad.px, quad.py, quad.pz, quad.roll, quad.pitch, quad.yaw,
                            ekf.mean[0], ekf.mean[1], ekf.mean[2], ekf.mean[3], nn[0], nn[1],
                            geo[0], geo[1], geo[2], *ranges, *cmd, fy, fz, float(sat),
                            ints[0], ints[1], ints[2], quad.vx, quad.vy, quad.vz, sp[1], sp[2])
                row += 1
        if i == n_steps:
            break

        if i % inner_every == 0:
            sp = schedule(t)
            setpoint.position[0], setpoint.position[1], setpoint.position[2] = sp
            if use_ekf:
                y, z, vy, vz = ekf.mean
            else:
                y, z, vy, vz = quad.py, quad.pz, quad.vy, quad.vz
            est = ControlInput((quad.px, y, z), (quad.vx, vy, vz), quad.roll, quad.pitch, quad.yaw, gyro)
            out = ctrl.step(est, setpoint)
            cmd, sat = out.commands, out.saturated

        if dist is not None:
            if k_noise == noise_chunk:
                dist_noise = rng_dist.standard_normal((noise_chunk, 2))
                k_noise = 0
            fy, fz, ou = dist.advance(ou, quad.py, quad.pz, dt, dist_noise[k_noise])
            k_noise += 1
        quad.advance(cmd, fy, fz, dt)

        # cheap clearance test first; the footprint test only near the wall
        if not _clear(duct, quad, clear_radius):
            collided, t_hit = True, quad.t
            if stop_on_collision:
                break

    return FlightResult(log[:row], collided, t_hit, duration, seed)


def _clear(duct: DuctShape, quad: Quadrotor, clear_radius: float) -> bool:
    if not 0.0 <= quad.px <= duct.length:
        return False
    if duct.contains(quad.py, quad.pz, clear_radius):
        return True
    return quad.clear_of_wall(duct)


# ---------------------------------------------------------------------------
# data gathering

@dataclass
class WaypointPolicy:
    """Quasi-random excitation: uniform safe targets, 2-4 s dwell, smoothed.

    Targets are drawn over the part of the cross-section where the drone
    footprint keeps ``margin`` to the wall (plus ``ceiling_margin`` above); the setpoint follows them
    through a first-order filter with time constant ``smoothing``.
    """

    duct: DuctShape
    params: DroneParams = field(default_factory=DroneParams)
    margin: float = 0.01
    ceiling_margin: float = 0.06
    dwell: tuple = (2.0, 4.0)
    smoothing: float = 0.6
    x_range: tuple = (0.35, 0.65)
    altitude_range: Optional[tuple] = None  # bottom-frame limits on targets

    def __post_init__(self):
        self._limits = None

    def safe(self, y: float, z: float) -> bool:
        p = self.params
        h = 0.5 * p.height + self.margin
        s = 0.5 * p.span + self.margin
        if self.altitude_range is not None:
            zb = z + self.duct.half_height
            if not self.altitude_range[0] <= zb <= self.altitude_range[1]:
                return False
        # extra headroom: climbing out of the central down-draft overshoots upward
        return (self.duct.contains(y, z) and drone_clear_of_wall(self.duct, y, z, 0.0, s, h)
                and drone_clear_of_wall(self.duct, y, z + self.ceiling_margin, 0.0, s, h))

    def altitude_limits(self) -> tuple:
        """Lowest and highest axis-frame z with a safe lateral chord (1 mm scan)."""
        hh = self.duct.half_height
        zs = [z for z in np.arange(-hh, hh, 0.001) if self._chord(z) is not None]
        if not zs:
            raise ValueError("no safe flight region inside the duct")
        return float(zs[0]), float(zs[-1])

    def _chord(self, z: float):
        hw = 0.5 * getattr(self.duct, "width", 2 * self.duct.half_height)
        ys = [y for y in np.linspace(-hw, hw, 201) if self.safe(y, z)]
        return (ys[0], ys[-1]) if ys else None

    def sample_target(self, rng: np.random.Generator) -> tuple:
        """Altitude uniform over the safe band, then lateral position uniform on its chord.

        Drawing altitude first gives the narrow band near the floor as much
        coverage as the wide middle of the duct.
        """
        if self._limits is None:
            self._limits = self.altitude_limits()
        lo, hi = self._limits
        L = self.duct.length
        for _ in range(10000):
            z = rng.uniform(lo, hi)
            chord = self._chord(z)
            if chord is None:
                continue
            y = rng.uniform(*chord)
            if self.safe(y, z):
                x = rng.uniform(self.x_range[0] * L, self.x_range[1] * L)
                return x, y, z
        raise ValueError("no safe flight region inside the duct")

    def schedule(self, duration: float, rng: np.random.Generator, start=None) -> Schedule:
        """Precomputed setpoint track at 100 Hz, held between samples."""
        targets, times = [], []
        t = 0.0
        while t <= duration:
            targets.append(self.sample_target(rng))
            times.append(t)
            t += rng.uniform(*self.dwell)
        rate = 100.0
        n = int(math.ceil(duration * rate)) + 2
        track = np.zeros((n, 3))
        cur = np.array(start if start is not None else targets[0], dtype=float)
        alpha = 1.0 - math.exp(-1.0 / (rate * self.smoothing))
        k = 0
        for s in range(n):
            ts = s / rate
            while k + 1 < len(times) and times[k + 1] <= ts:
                k += 1
            cur = cur + alpha * (np.asarray(targets[k]) - cur)
            track[s] = cur
        rows = [tuple(r) for r in track.tolist()]

        def fn(tq: float, rows=rows):
            return rows[min(int(tq * rate), len(rows) - 1)]
        return Schedule(fn)


def flight_to_dataset_rows(result: FlightResult, drop_start: float = 10.0, drop_end: float = 5.0,
                           t_offset: float = 0.0) -> np.ndarray:
    """Dataset rows (DATASET_COLUMNS order) from a flight log."""
    w = result.window(drop_start, drop_end)
    cols = ["t"] + [f"tof{i}" for i in range(8)] + ["tof_up", "tof_down",
                                                     "y", "z", "vy", "vz", "roll", "pitch", "x"]
    out = w[:, [LOG[c] for c in cols]].copy()
    out[:, 0] += t_offset
    assert len(cols) == len(DATASET_COLUMNS)
    return out
