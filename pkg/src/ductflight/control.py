"""Cascaded PID hover controller and X-quad mixer.

position (100 Hz) -> velocity (100 Hz) -> lean angles + collective
-> attitude (500 Hz) -> body rate (500 Hz) -> torques -> mixer
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np

from .dynamics import ROTOR_SPIN, ROTOR_X, ROTOR_Y, DroneParams
from .sensors import GRAVITY


@dataclass
class Pid:
    kp: float = 0.0
    ki: float = 0.0
    kd: float = 0.0
    limit: float = math.inf
    i_limit: float = math.inf


def _pid(kp, ki, kd, limit, i_limit):
    return field(default_factory=lambda: Pid(kp, ki, kd, limit, i_limit))


@dataclass
class CascadeGains:
    # position loop outputs a velocity setpoint (m/s)
    pos_x: Pid = _pid(1.5, 0.0, 0.0, 0.5, 0.5)
    pos_y: Pid = _pid(2.5, 0.0, 0.0, 0.5, 0.5)
    pos_z: Pid = _pid(2.5, 0.0, 0.0, 0.5, 0.5)
    # velocity loop outputs an acceleration setpoint (m/s^2)
    vel_x: Pid = _pid(4.0, 1.0, 0.0, 4.0, 0.5)
    vel_y: Pid = _pid(6.0, 2.0, 0.0, 4.0, 0.5)
    vel_z: Pid = _pid(6.0, 4.0, 0.0, 6.0, 1.0)
    # attitude loop outputs a body-rate setpoint (rad/s)
    att_roll: Pid = _pid(16.0, 0.0, 0.0, 6.0, 0.0)
    att_pitch: Pid = _pid(16.0, 0.0, 0.0, 6.0, 0.0)
    att_yaw: Pid = _pid(6.0, 0.0, 0.0, 3.0, 0.0)
    # rate loop outputs an angular acceleration (rad/s^2), scaled by inertia
    rate_roll: Pid = _pid(90.0, 0.0, 0.0, 400.0, 0.0)
    rate_pitch: Pid = _pid(90.0, 0.0, 0.0, 400.0, 0.0)
    rate_yaw: Pid = _pid(30.0, 0.0, 0.0, 100.0, 0.0)
    outer_rate: float = 100.0
    inner_rate: float = 500.0
    max_tilt: float = math.radians(20.0)

    def __post_init__(self):
        if self.inner_rate < self.outer_rate:
            raise ValueError("inner loop must run at least as fast as the outer loop")
        ratio = self.inner_rate / self.outer_rate
        if abs(ratio - round(ratio)) > 1e-9:
            raise ValueError("inner_rate must be an integer multiple of outer_rate")


@dataclass
class Setpoint:
    position: np.ndarray
    yaw: float = 0.0

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=float)


class ControlInput(NamedTuple):
    position: tuple  # x, y, z
    velocity: tuple
    roll: float
    pitch: float
    yaw: float
    rates: tuple  # body wx, wy, wz


class RotorCommand(NamedTuple):
    commands: np.ndarray
    saturated: bool


class PidState:
    __slots__ = ("g", "integral", "prev", "dt")

    def __init__(self, gains: Pid, dt: float):
        self.g = gains
        self.dt = dt
        self.integral = 0.0
        self.prev = None

    def update(self, err: float) -> float:
        g = self.g
        if g.ki:
            self.integral = min(max(self.integral + err * self.dt, -g.i_limit), g.i_limit)
        d = 0.0
        if g.kd and self.prev is not None:
            d = (err - self.prev) / self.dt
        self.prev = err
        u = g.kp * err + g.ki * self.integral + g.kd * d
        return min(max(u, -g.limit), g.limit)

    def reset(self):
        self.integral = 0.0
        self.prev = None


def _wrap(a: float) -> float:
    return (a + math.pi) % (2.0 * math.pi) - math.pi


def mixer(collective: float, torques, params: DroneParams) -> RotorCommand:
    """Allocate collective thrust and body torques to the four rotors.

    The X layout's sign patterns are mutually orthogonal, so the inverse
    allocation is closed form.  Thrusts are clamped to [0, max] before the
    square-root thrust map.
    """
    tx, ty, tz = torques
    a, k = params.moment_arm, params.yaw_coeff
    tmax = params.rotor_max
    base = 0.25 * collective
    cmds = np.empty(4)
    saturated = False
    for i in range(4):
        ti = base + (ROTOR_Y[i] * tx / a - ROTOR_X[i] * ty / a + ROTOR_SPIN[i] * tz / k) * 0.25
        if ti < 0.0:
            ti, saturated = 0.0, True
        elif ti > tmax:
            ti, saturated = tmax, True
        cmds[i] = math.sqrt(ti / tmax)
    return RotorCommand(cmds, saturated)


class CascadeController:
    """Stateful controller ticked at the inner-loop rate.

    The outer (position/velocity) loops run on every ``inner/outer``-th tick
    and hold their lean-angle and thrust demands in between.
    """

    def __init__(self, gains: Optional[CascadeGains] = None, params: Optional[DroneParams] = None):
        self.gains = gains or CascadeGains()
        self.params = params or DroneParams()
        g = self.gains
        dto, dti = 1.0 / g.outer_rate, 1.0 / g.inner_rate
        self.pos = [PidState(g.pos_x, dto), PidState(g.pos_y, dto), PidState(g.pos_z, dto)]
        self.vel = [PidState(g.vel_x, dto), PidState(g.vel_y, dto), PidState(g.vel_z, dto)]
        self.att = [PidState(g.att_roll, dti), PidState(g.att_pitch, dti), PidState(g.att_yaw, dti)]
        self.rate = [PidState(g.rate_roll, dti), PidState(g.rate_pitch, dti), PidState(g.rate_yaw, dti)]
        self.decimation = int(round(g.inner_rate / g.outer_rate))
        self._tick = 0
        self.roll_sp = self.pitch_sp = 0.0
        self.thrust_sp = self.params.weight
        self.saturated = False

    def reset(self):
        for p in self.pos + self.vel + self.att + self.rate:
            p.reset()
        self._tick = 0

    @property
    def integrators(self) -> tuple:
        return tuple(p.integral for p in self.vel)

    def _outer(self, est: ControlInput, sp: Setpoint):
        m = self.params.mass
        acc = [0.0, 0.0, 0.0]
        for k in range(3):
            v_sp = self.pos[k].update(sp.position[k] - est.position[k])
            acc[k] = self.vel[k].update(v_sp - est.velocity[k])
        ax, ay, az = acc
        cy, sy = math.cos(est.yaw), math.sin(est.yaw)
        ax_b = cy * ax + sy * ay
        ay_b = -sy * ax + cy * ay
        up = max(GRAVITY + az, 0.1 * GRAVITY)
        tilt = self.gains.max_tilt
        pitch = min(max(math.atan2(ax_b, up), -tilt), tilt)
        roll = min(max(math.atan2(-ay_b * math.cos(pitch), up), -tilt), tilt)
        self.roll_sp, self.pitch_sp = roll, pitch
        tilt_comp = max(math.cos(est.roll) * math.cos(est.pitch), 0.5)
        self.thrust_sp = min(m * (GRAVITY + az) / tilt_comp, self.params.max_thrust)

    def step(self, est: ControlInput, sp: Setpoint) -> RotorCommand:
        if self._tick % self.decimation == 0:
            self._outer(est, sp)
        self._tick += 1
        errs = (self.roll_sp - est.roll, self.pitch_sp - est.pitch, _wrap(sp.yaw - est.yaw))
        inertia = self.params.inertia
        torques = []
        for k in range(3):
            rate_sp = self.att[k].update(errs[k])
            torques.append(inertia[k] * self.rate[k].update(rate_sp - est.rates[k]))
        out = mixer(self.thrust_sp, torques, self.params)
        self.saturated = out.saturated
        return out


def cascade_step(controller: CascadeController, est: ControlInput, sp: Setpoint) -> RotorCommand:
    return controller.step(est, sp)
